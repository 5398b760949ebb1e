use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub bce_weight: f64,
    pub dice_weight: f64,
    /// Smoothing constant added to both sides of the Dice ratio.
    pub dice_smooth: f64,
    /// Probabilities are clipped to `[prob_clip, 1 - prob_clip]` inside BCE.
    pub prob_clip: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { bce_weight: 0.5, dice_weight: 0.5, dice_smooth: 1e-5, prob_clip: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.bce_weight, self.dice_weight];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative and not both zero, got {w:?}")));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::Config(format!("dice_smooth must be positive, got {}", self.dice_smooth)));
        }
        if !(self.prob_clip > 0.0 && self.prob_clip < 0.5) {
            return Err(Error::Config(format!("prob_clip must lie in (0, 0.5), got {}", self.prob_clip)));
        }
        Ok(())
    }
}

fn same_shape<T: Scalar>(a: &Var<'_, T>, b: &Var<'_, T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!("{what}: prediction {:?} and mask {:?} differ in shape", a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `z`.
///
/// Clipping the probability to `[eps, 1 - eps]` is the same as clamping the
/// logit to `[logit(eps), logit(1 - eps)]`, after which the per-pixel term
/// `softplus(l) - z*l` never overflows.
pub fn bce_loss<'g, T: Scalar>(logits: Var<'g, T>, z: Var<'g, T>, prob_clip: f64) -> Result<Var<'g, T>> {
    same_shape(&logits, &z, "bce")?;
    let bound = ((1.0 - prob_clip) / prob_clip).ln();
    let l = logits.clamp(-bound, bound);
    Ok(l.softplus().sub(z.mul(l)?)?.mean())
}

/// `1 - (2 sum(p z) + c) / (sum(p) + sum(z) + c)` over every pixel of the
/// batch at once.
pub fn dice_loss<'g, T: Scalar>(probs: Var<'g, T>, z: Var<'g, T>, smooth: f64) -> Result<Var<'g, T>> {
    same_shape(&probs, &z, "dice")?;
    let num = probs.mul(z)?.sum().scale(2.0).add_scalar(smooth);
    let den = probs.sum().add(z.sum())?.add_scalar(smooth);
    Ok(num.div(den)?.neg().add_scalar(1.0))
}

/// Weighted sum of BCE on the logits and Dice on their sigmoid. A zero weight
/// drops its term from the graph entirely.
pub fn combined_loss<'g, T: Scalar>(cfg: &LossConfig, logits: Var<'g, T>, z: Var<'g, T>) -> Result<Var<'g, T>> {
    let mut total: Option<Var<'g, T>> = None;
    if cfg.bce_weight != 0.0 {
        let b = bce_loss(logits, z, cfg.prob_clip)?;
        total = Some(if cfg.bce_weight == 1.0 { b } else { b.scale(cfg.bce_weight) });
    }
    if cfg.dice_weight != 0.0 {
        let d = dice_loss(logits.sigmoid(), z, cfg.dice_smooth)?;
        let d = if cfg.dice_weight == 1.0 { d } else { d.scale(cfg.dice_weight) };
        total = Some(match total {
            Some(t) => t.add(d)?,
            None => d,
        });
    }
    total.ok_or_else(|| Error::Config("both loss weights are zero".into()))
}
