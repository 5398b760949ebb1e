use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::SplineGrid;
use crate::nn::{Activation, SlotKind, BOA_MEMBERS};
use crate::ssm::MambaSettings;

/// Which Mamba block sits after the first conv block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Patch embedding, token MLP, convolutional Mamba block.
    MambaMlp,
    /// Patch embedding, KAN block, convolutional Mamba block.
    MambaKan,
    /// As `MambaKan` with bags of activations in place of the fixed ones.
    MambaBoaKan,
    /// The Mamba-KAN block.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::MambaMlp, Variant::MambaKan, Variant::MambaBoaKan, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MambaMlp => "mamba_mlp",
            Variant::MambaKan => "mamba_kan",
            Variant::MambaBoaKan => "mamba_boa_kan",
            Variant::Full => "full",
        }
    }

    pub fn uses_boa(self) -> bool {
        matches!(self, Variant::MambaBoaKan | Variant::Full)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            Error::Config(format!("unknown variant `{s}` (expected mamba_mlp, mamba_kan, mamba_boa_kan or full)"))
        })
    }
}

/// Where the extra layer norm of the two tokenized encoder stages goes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    AfterKan,
    BeforeKan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub conv_channels: [usize; 3],
    pub embed_dims: [usize; 2],
    pub ssm_state: usize,
    pub spline: SplineGrid,
    pub kan_base: Activation,
    pub variant: Variant,
    pub boa_members: Vec<Activation>,
    /// Activation used where the variant has no bag of activations.
    pub fixed_activation: Activation,
    /// Build every bag of activations as this single function instead.
    pub replace_boa: Option<Activation>,
    pub norm_placement: NormPlacement,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::tiny()
    }
}

impl ModelConfig {
    pub fn tiny() -> Self {
        ModelConfig {
            in_channels: 3,
            conv_channels: [16, 32, 64],
            embed_dims: [96, 128],
            ssm_state: 8,
            spline: SplineGrid::default(),
            kan_base: Activation::Silu,
            variant: Variant::Full,
            boa_members: BOA_MEMBERS.to_vec(),
            fixed_activation: Activation::Silu,
            replace_boa: None,
            norm_placement: NormPlacement::AfterKan,
            seed: 0,
        }
    }

    pub fn reference() -> Self {
        ModelConfig { conv_channels: [32, 64, 128], embed_dims: [128, 160], ..ModelConfig::tiny() }
    }

    /// Named preset: `tiny` or `reference`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "reference" => Ok(Self::reference()),
            _ => Err(Error::Config(format!("unknown model preset `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.conv_channels;
        if self.in_channels == 0 || c[0] == 0 || !(c[0] < c[1] && c[1] < c[2]) {
            return Err(Error::Config(format!("conv channels must be positive and strictly increasing, got {c:?}")));
        }
        if self.embed_dims.contains(&0) {
            return Err(Error::Config(format!("embed dims must be positive, got {:?}", self.embed_dims)));
        }
        if self.ssm_state == 0 {
            return Err(Error::Config("ssm_state must be positive".into()));
        }
        if self.boa_members.is_empty() {
            return Err(Error::Config("boa_members must not be empty".into()));
        }
        self.spline.validate()
    }

    /// Settings of the Mamba block for this variant.
    pub fn mamba_settings(&self) -> MambaSettings {
        let slot = if self.variant.uses_boa() {
            match self.replace_boa {
                Some(a) => SlotKind::Fixed(a),
                None => SlotKind::Boa,
            }
        } else {
            SlotKind::Fixed(self.fixed_activation)
        };
        MambaSettings {
            state: self.ssm_state,
            spline: self.spline,
            kan_base: self.kan_base,
            main: slot,
            gate: slot,
            boa_members: self.boa_members.clone(),
        }
    }

    /// Input extents must be multiples of this.
    pub const DIVISOR: usize = 32;
}
