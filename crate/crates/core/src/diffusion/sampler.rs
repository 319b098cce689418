use ndarray::{Array4, Zip};

use super::conditioning::build_conditioning;
use super::denoiser::{noise_like, sigmoid, DenoiserModel};
use crate::error::{Error, Result};
use crate::volume::{MultiContrastVolume, SoftPrediction, REGIONS};

/// Descending timesteps `ceil(T * j / steps)` for `j = steps..=1`.
pub fn ddim_timesteps(t_max: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_max {
        return Err(Error::InvalidConfig(format!("sampling steps must lie in [1, {t_max}], got {steps}")));
    }
    Ok((1..=steps).rev().map(|j| (t_max * j).div_ceil(steps)).collect())
}

/// Deterministic (eta = 0) reverse process from seeded noise under a fixed
/// conditioning grid. Returns the final clean estimate in `[0, 1]`.
pub fn sample_with_condition(model: &DenoiserModel, cond: &Array4<f32>, steps: usize, seed: u64) -> Result<Array4<f32>> {
    let ts = ddim_timesteps(model.schedule.steps(), steps)?;
    let s = cond.shape();
    let mut x = noise_like(seed, &[REGIONS, s[1], s[2], s[3]]);
    model.check_inputs(cond.shape(), x.shape())?;
    let mut probs = Array4::zeros(x.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        probs = model.logits(cond, &x, t).mapv(sigmoid);
        let Some(&prev) = ts.get(i + 1) else {
            break;
        };
        let (ab, ab_prev) = (model.schedule.alpha_bar(t), model.schedule.alpha_bar(prev));
        Zip::from(&mut x).and(&probs).for_each(|xv, &p| {
            let x0 = 2.0 * p as f64 - 1.0;
            let eps = (*xv as f64 - ab.sqrt() * x0) / (1.0 - ab).sqrt();
            *xv = (ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * eps) as f32;
        });
    }
    Ok(probs.mapv(|p| p.clamp(0.0, 1.0)))
}

/// Samples a mask or discrepancy (per the model's target mode) for one
/// preprocessed volume and its baseline prediction.
pub fn sample(
    model: &DenoiserModel,
    vol: &MultiContrastVolume,
    upred: &SoftPrediction,
    steps: usize,
    seed: u64,
) -> Result<SoftPrediction> {
    let cond = build_conditioning(&model.config.conditioning, vol, upred)?;
    Ok(SoftPrediction {
        probs: sample_with_condition(model, &cond, steps, seed)?,
        spacing: vol.spacing,
    })
}
