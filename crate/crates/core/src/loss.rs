//! Compound segmentation loss: smoothed soft Dice + voxel-mean BCE +
//! voxel-mean MSE, unweighted by default.
//!
//! Two entry points compute the same quantity. [`compound_loss`] takes
//! probabilities and is the reference form. [`LossWeights::eval_logits`]
//! takes pre-sigmoid logits and returns the gradient with respect to them;
//! the networks train through it.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;

/// Smoothing constant in numerator and denominator of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1e-5;
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside BCE.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
    pub mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::COMPOUND
    }
}

impl LossWeights {
    /// Dice + BCE + MSE.
    pub const COMPOUND: Self = Self {
        dice: 1.0,
        bce: 1.0,
        mse: 1.0,
    };
    /// Dice + BCE, used for the baseline segmenter.
    pub const DICE_BCE: Self = Self {
        dice: 1.0,
        bce: 1.0,
        mse: 0.0,
    };

    /// Loss and gradient with respect to `logits`; `target` holds 0/1
    /// values and both are laid out as `channels` equal contiguous blocks.
    pub fn eval_logits<F: Real>(
        &self,
        logits: &[F],
        target: &[F],
        channels: usize,
    ) -> (LossTerms, Vec<F>) {
        assert_eq!(logits.len(), target.len());
        let probs: Vec<f64> = logits
            .iter()
            .map(|z| 1.0 / (1.0 + (-z.to_f64().unwrap_or(f64::NAN)).exp()))
            .collect();
        let tgt: Vec<f64> = target.iter().map(|t| t.to_f64().unwrap_or(0.0)).collect();
        let (dice, d_dice) = soft_dice(&probs, &tgt, channels);
        let n = probs.len() as f64;
        let mut bce = 0.0;
        let mut mse = 0.0;
        let mut grad = Vec::with_capacity(probs.len());
        for i in 0..probs.len() {
            let z = logits[i].to_f64().unwrap_or(f64::NAN);
            let (p, g) = (probs[i], tgt[i]);
            // softplus(z) - g z == -[g ln p + (1-g) ln(1-p)]
            bce += z.max(0.0) + (-z.abs()).exp().ln_1p() - g * z;
            mse += (p - g) * (p - g);
            let dp = self.dice * d_dice[i] + self.mse * 2.0 * (p - g) / n;
            let dz = dp * p * (1.0 - p) + self.bce * (p - g) / n;
            grad.push(F::c(dz));
        }
        let terms = LossTerms::new(self, dice, bce / n, mse / n);
        (terms, grad)
    }

    /// Loss and gradient with respect to probabilities `pred`.
    pub fn eval_probs(&self, pred: &[f64], target: &[f64], channels: usize) -> (LossTerms, Vec<f64>) {
        assert_eq!(pred.len(), target.len());
        let (dice, d_dice) = soft_dice(pred, target, channels);
        let n = pred.len() as f64;
        let mut bce = 0.0;
        let mut mse = 0.0;
        let mut grad = Vec::with_capacity(pred.len());
        for i in 0..pred.len() {
            let (p, g) = (pred[i], target[i]);
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            bce -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
            mse += (p - g) * (p - g);
            let d_bce = if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                (-g / pc + (1.0 - g) / (1.0 - pc)) / n
            } else {
                0.0
            };
            grad.push(self.dice * d_dice[i] + self.bce * d_bce + self.mse * 2.0 * (p - g) / n);
        }
        (LossTerms::new(self, dice, bce / n, mse / n), grad)
    }
}

/// Individual loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub dice: f64,
    pub bce: f64,
    pub mse: f64,
    pub total: f64,
}

impl LossTerms {
    fn new(w: &LossWeights, dice: f64, bce: f64, mse: f64) -> Self {
        Self {
            dice,
            bce,
            mse,
            total: w.dice * dice + w.bce * bce + w.mse * mse,
        }
    }
}

/// Channel-averaged smoothed soft Dice loss and its gradient.
fn soft_dice(pred: &[f64], target: &[f64], channels: usize) -> (f64, Vec<f64>) {
    assert!(channels > 0 && pred.len() % channels == 0);
    let n = pred.len() / channels;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for c in 0..channels {
        let r = c * n..(c + 1) * n;
        let (p, g) = (&pred[r.clone()], &target[r.clone()]);
        let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        let denom: f64 = p.iter().sum::<f64>() + g.iter().sum::<f64>() + DICE_SMOOTH;
        let numer = 2.0 * inter + DICE_SMOOTH;
        loss += 1.0 - numer / denom;
        for (i, out) in grad[r].iter_mut().enumerate() {
            *out = -(2.0 * g[i] * denom - numer) / (denom * denom) / channels as f64;
        }
    }
    (loss / channels as f64, grad)
}

/// Compound loss of soft predictions against a binary target, both
/// `(C, D, W, H)`.
pub fn compound_loss(pred: &Array4<f32>, target: &Array4<u8>, weights: LossWeights) -> Result<LossTerms> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(target.shape(), pred.shape()));
    }
    if let Some(bad) = pred.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::OutOfUnitRange(*bad as f64));
    }
    crate::volume::check_binary(target.iter().copied())?;
    let p: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = target.iter().map(|&v| v as f64).collect();
    Ok(weights.eval_probs(&p, &g, pred.shape()[0]).0)
}
