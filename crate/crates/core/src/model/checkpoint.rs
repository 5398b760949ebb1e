//! Checkpoint file: `FSEGCKPT`, a little-endian `u32` version, a `u32`
//! manifest length, the JSON manifest, then one tensor container per
//! manifest entry (parameters first, then buffers).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::io::{read_tensor, write_tensor};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub dtype: DType,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
    /// Free-form training metadata.
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// A checkpoint held in memory. Values are kept at 64-bit and written at
/// the manifest's precision.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: Vec<Tensor<f64>>,
    pub buffers: Vec<Tensor<f64>>,
}

impl Checkpoint {
    pub fn of<T: Scalar>(model: &Model<T>, meta: serde_json::Value) -> Self {
        let s = &model.store;
        let params: Vec<_> = s.param_ids().map(|id| (s.name(id).to_string(), s.value(id).cast::<f64>())).collect();
        let buffers: Vec<_> =
            s.buffer_ids().map(|id| (s.buffer_name(id).to_string(), s.buffer(id).cast::<f64>())).collect();
        let entry = |(n, t): &(String, Tensor<f64>)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() };
        Checkpoint {
            manifest: Manifest {
                config: model.cfg.clone(),
                dtype: T::DTYPE,
                params: params.iter().map(entry).collect(),
                buffers: buffers.iter().map(entry).collect(),
                meta,
            },
            params: params.into_iter().map(|p| p.1).collect(),
            buffers: buffers.into_iter().map(|b| b.1).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let json = serde_json::to_vec(&self.manifest)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for t in self.params.iter().chain(&self.buffers) {
            match self.manifest.dtype {
                DType::F32 => write_tensor(w, &t.cast::<f32>())?,
                DType::F64 => write_tensor(w, t)?,
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut word)?;
        let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        let mut read = |entries: &[TensorEntry]| -> Result<Vec<Tensor<f64>>> {
            entries
                .iter()
                .map(|e| {
                    let (h, t) = read_tensor::<f64, _>(r)
                        .map_err(|err| Error::Checkpoint(format!("tensor `{}`: {err}", e.name)))?;
                    if h.shape != e.shape {
                        return Err(Error::Checkpoint(format!(
                            "tensor `{}`: stored shape {:?} disagrees with manifest {:?}",
                            e.name, h.shape, e.shape
                        )));
                    }
                    Ok(t)
                })
                .collect()
        };
        let params = read(&manifest.params)?;
        let buffers = read(&manifest.buffers)?;
        Ok(Checkpoint { manifest, params, buffers })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Rebuild the model from the embedded config and copy every tensor in,
    /// checking names and shapes.
    pub fn into_model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = Model::<T>::build(&self.manifest.config)?;
        let store = &mut model.store;
        if self.manifest.params.len() != store.num_params() || self.manifest.buffers.len() != store.num_buffers() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters and {} buffers, config builds {} and {}",
                self.manifest.params.len(),
                self.manifest.buffers.len(),
                store.num_params(),
                store.num_buffers()
            )));
        }
        let mismatch = |name: &str, want: &[usize], got: &[usize]| {
            Error::Checkpoint(format!("tensor `{name}`: checkpoint shape {got:?}, model expects {want:?}"))
        };
        for (e, t) in self.manifest.params.iter().zip(&self.params) {
            let id = store.find(&e.name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", e.name)))?;
            if store.value(id).shape() != t.shape() {
                return Err(mismatch(&e.name, store.value(id).shape(), t.shape()));
            }
            store.set(id, t.cast())?;
        }
        for (e, t) in self.manifest.buffers.iter().zip(&self.buffers) {
            let id =
                store.find_buffer(&e.name).ok_or_else(|| Error::Checkpoint(format!("unknown buffer `{}`", e.name)))?;
            if store.buffer(id).shape() != t.shape() {
                return Err(mismatch(&e.name, store.buffer(id).shape(), t.shape()));
            }
            *store.buffer_mut(id) = t.cast();
        }
        Ok(model)
    }
}
