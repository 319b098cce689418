use ndarray::{Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a linear beta schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

/// Forward-process coefficients for timesteps `1..=T`.
///
/// Index `t - 1` of each vector holds the value for step `t`; step `0` is
/// the clean state with `alpha_bar(0) == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            Err(Error::TimestepOutOfRange {
                t,
                lo: 0,
                hi: self.steps(),
            })
        } else {
            Ok(())
        }
    }
}

/// Linear betas from `beta_min` to `beta_max` over `t` steps.
pub fn make_schedule(t: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t == 0 {
        return Err(Error::InvalidConfig("schedule needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let betas: Vec<f64> = (0..t)
        .map(|i| {
            if t == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (t - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

/// `x_t = sqrt(abar_t) (2 x0 - 1) + sqrt(1 - abar_t) eps`.
pub fn q_sample(x0: &Array4<f32>, t: usize, eps: &Array4<f32>, sched: &NoiseSchedule) -> Result<Array4<f32>> {
    sched.check_t(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::shape(x0.shape(), eps.shape()));
    }
    let ab = sched.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = Array4::<f32>::zeros(x0.raw_dim());
    Zip::from(&mut out).and(x0).and(eps).for_each(|o, &x, &e| {
        *o = (signal * (2.0 * x as f64 - 1.0) + noise * e as f64) as f32;
    });
    Ok(out)
}
