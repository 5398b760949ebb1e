//! Finite-difference gradient checks of every layer type, the assembled
//! model and the training loss, at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kan::{KanBlock, KanLayer, KanLinear, PatchEmbed, SplineGrid};
use crate::model::{Model, ModelConfig};
use crate::nn::{Activation, BlockKind, Boa, Builder, ConvBlock, SpatialAttention};
use crate::objective::{combined_loss, LossConfig};
use crate::ssm::{MambaKanBlock, MambaSettings, Ssm, TokenizedMamba};
use crate::tensor::gradcheck::{away_from_zero, grad_check_params, Coords, ParamCheck};
use crate::tensor::{Ctx, Mode, ParamId, ParamStore, Tensor, Var};

/// Tolerance on the relative error of every check.
pub const GRAD_TOL: f64 = 1e-4;
/// Central-difference step.
pub const GRAD_EPS: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub layer: &'static str,
    /// Parameters plus input, with the input registered as `input`.
    pub report: ParamCheck,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < GRAD_TOL && self.report.kinks * 10 < self.report.checked.max(1)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>()).expect("sized")
}

/// `sum(out * w)` for a fixed random `w`, so no output direction is favoured.
fn probe(out: Var<'_, f64>, seed: u64) -> Result<Var<'_, f64>> {
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), &out.shape(), -1.0, 1.0);
    Ok(out.mul(out.graph().constant(w))?.sum())
}

struct Case {
    store: ParamStore<f64>,
    input: ParamId,
}

impl Case {
    /// Build a layer into a fresh store, then register the input as a
    /// parameter so its gradient is checked alongside the weights.
    fn new<L>(seed: u64, build: impl FnOnce(&mut Builder<'_, f64>) -> Result<L>, x: Tensor<f64>) -> Result<(Self, L)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = build(&mut Builder::new(&mut store, &mut rng))?;
        let input = store.add_param("input", x)?;
        Ok((Case { store, input }, layer))
    }

    fn run<F>(mut self, layer: &'static str, coords: Coords, f: F) -> Result<LayerCheck>
    where
        F: for<'g, 's> Fn(&mut Ctx<'g, 's, f64>, Var<'g, f64>) -> Result<Var<'g, f64>>,
    {
        let input = self.input;
        let report = grad_check_params(
            &mut self.store,
            Mode::Train,
            |cx| {
                let x = cx.p(input);
                f(cx, x)
            },
            GRAD_EPS,
            coords,
        )?;
        Ok(LayerCheck { layer, report })
    }
}

fn small_settings() -> MambaSettings {
    MambaSettings { state: 2, ..MambaSettings::default() }
}

/// Run every check. `seed` picks weights and inputs.
pub fn gradient_suite(seed: u64) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = |shape: &[usize]| away_from_zero(&uniform(&mut rng, shape, -1.0, 1.0));
    let grid = SplineGrid::default();
    let all = Coords::All;
    let mut out = Vec::new();

    let (c, l) = Case::new(seed, |b| ConvBlock::new(b, BlockKind::Down, 3, 4), img(&[2, 3, 8, 8]))?;
    out.push(c.run("conv_block_down", all, |cx, x| probe(l.forward(cx, x)?, 1))?);
    let (c, l) = Case::new(seed, |b| ConvBlock::new(b, BlockKind::Up, 4, 3), img(&[2, 4, 4, 4]))?;
    out.push(c.run("conv_block_up", all, |cx, x| probe(l.forward(cx, x)?, 2))?);
    let (c, l) = Case::new(seed, SpatialAttention::new, img(&[2, 3, 6, 6]))?;
    out.push(c.run("spatial_attention", all, |cx, x| probe(l.forward(cx, x)?, 3))?);
    let (c, l) = Case::new(seed, Boa::new, img(&[3, 5]))?;
    out.push(c.run("boa", all, |cx, x| probe(l.forward(cx, x)?, 4))?);
    let (c, l) = Case::new(seed, |b| KanLinear::new(b, 3, 4, grid, Activation::Silu), img(&[5, 3]).map(|v| v * 1.2))?;
    out.push(c.run("kan_linear", all, |cx, x| probe(l.forward(cx, x)?, 5))?);
    let (c, l) = Case::new(seed, |b| KanLayer::new(b, 4, grid, Activation::Silu), img(&[2, 16, 4]))?;
    out.push(c.run("kan_layer", all, |cx, x| probe(l.forward(cx, x, 4, 4)?, 6))?);
    let (c, l) = Case::new(seed, |b| KanBlock::new(b, 4, grid, Activation::Silu), img(&[2, 16, 4]))?;
    out.push(c.run("kan_block", all, |cx, x| probe(l.forward(cx, x, 4, 4)?, 7))?);
    let (c, l) = Case::new(seed, |b| PatchEmbed::new(b, 3, 5), img(&[2, 3, 8, 8]))?;
    out.push(c.run("patch_embed", all, |cx, x| probe(l.forward(cx, x)?.tokens, 8))?);
    let (c, l) = Case::new(seed, |b| Ssm::new(b, 3, 4), img(&[2, 6, 3]))?;
    out.push(c.run("selective_scan", all, |cx, x| probe(l.forward(cx, x)?, 9))?);
    let ms = small_settings();
    let (c, l) = Case::new(seed, |b| MambaKanBlock::new(b, 3, 4, &ms), img(&[2, 3, 8, 8]))?;
    out.push(c.run("mamba_kan_block", all, |cx, x| probe(l.forward(cx, x)?, 10))?);
    let fixed = MambaSettings {
        main: crate::nn::SlotKind::Fixed(Activation::Silu),
        gate: crate::nn::SlotKind::Fixed(Activation::Silu),
        ..small_settings()
    };
    let (c, l) = Case::new(seed, |b| TokenizedMamba::new(b, 3, 4, &fixed, false), img(&[2, 3, 8, 8]))?;
    out.push(c.run("conv_mamba_block", all, |cx, x| probe(l.forward(cx, x)?, 11))?);

    let logits = uniform(&mut rng, &[2, 1, 4, 4], -3.0, 3.0);
    let z = uniform(&mut rng, &[2, 1, 4, 4], 0.0, 1.0).map(|v| if v < 0.4 { 1.0 } else { 0.0 });
    let (c, _) = Case::new(seed, |_| Ok(()), logits)?;
    out.push(
        c.run("combined_loss", all, |cx, x| combined_loss(&LossConfig::default(), x, cx.graph.constant(z.clone())))?,
    );

    let cfg = ModelConfig { seed, ..ModelConfig::tiny() };
    let model = Model::<f64>::build(&cfg)?;
    let mut store = model.store;
    let input = store.add_param("input", uniform(&mut rng, &[1, 3, 32, 32], 0.0, 1.0))?;
    let net = model.net;
    let c = Case { store, input };
    out.push(c.run("tiny_model", Coords::Sample { per_param: 1, seed }, |cx, x| {
        let y = net.forward(cx, x)?;
        Ok(probe(y, 12)?.scale(1.0 / 1024.0))
    })?);
    Ok(out)
}
