//! Kolmogorov-Arnold layers: spline basis, KanLinear, the KAN layer and
//! block, and patch embedding.

mod block;
mod linear;
mod spline;

pub use block::{KanBlock, KanLayer, KanStage, PatchEmbed, Tokens, KAN_STAGES};
pub use linear::KanLinear;
pub use spline::SplineGrid;
