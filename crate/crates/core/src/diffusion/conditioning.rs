use ndarray::{concatenate, Array4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmenter::DEFAULT_THRESHOLD;
use crate::volume::{MultiContrastVolume, Provenance, Region, RegionMask, SoftPrediction, CONTRASTS, REGIONS};

/// Multiplier applied to non-tumor voxels by [`mask_condition`].
pub const MASK_BACKGROUND: f32 = 0.2;

/// What the denoiser is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditioningVariant {
    /// Baseline prediction only (3 channels).
    #[serde(rename = "pred")]
    PredOnly,
    /// Baseline prediction followed by the four contrasts (7 channels).
    #[serde(rename = "concat")]
    ConcatMriPred,
    /// Contrasts attenuated outside the predicted tumor (4 channels).
    #[serde(rename = "masked")]
    MaskedMri,
}

impl ConditioningVariant {
    pub fn channels(self) -> usize {
        match self {
            Self::PredOnly => REGIONS,
            Self::ConcatMriPred => REGIONS + CONTRASTS,
            Self::MaskedMri => CONTRASTS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PredOnly => "pred",
            Self::ConcatMriPred => "concat",
            Self::MaskedMri => "masked",
        }
    }
}

impl std::str::FromStr for ConditioningVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pred" => Ok(Self::PredOnly),
            "concat" => Ok(Self::ConcatMriPred),
            "masked" => Ok(Self::MaskedMri),
            other => Err(Error::InvalidConfig(format!("unknown conditioning variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditioningOptions {
    pub variant: ConditioningVariant,
    /// Feed baseline probabilities instead of the thresholded mask.
    pub soft_baseline: bool,
    pub threshold: f32,
    pub mask_background: f32,
}

impl Default for ConditioningOptions {
    fn default() -> Self {
        Self {
            variant: ConditioningVariant::ConcatMriPred,
            soft_baseline: false,
            threshold: DEFAULT_THRESHOLD,
            mask_background: MASK_BACKGROUND,
        }
    }
}

/// Scales every contrast by 1 inside the predicted whole tumor and by
/// `background` elsewhere.
pub fn mask_condition_with(vol: &MultiContrastVolume, upred: &RegionMask, background: f32) -> Result<MultiContrastVolume> {
    if vol.dims() != upred.dims() {
        let d = vol.dims();
        let u = upred.dims();
        return Err(Error::shape(&[d[0], d[1], d[2]], &[u[0], u[1], u[2]]));
    }
    let wt = upred.region(Region::WholeTumor);
    let mut out = vol.clone();
    for mut channel in out.data.axis_iter_mut(Axis(0)) {
        Zip::from(&mut channel).and(&wt).for_each(|v, &m| {
            if m == 0 {
                *v *= background;
            }
        });
    }
    out.meta = Provenance::Derived {
        note: "masked by baseline whole-tumor prediction".into(),
    };
    Ok(out)
}

/// [`mask_condition_with`] using the default 0.2 background multiplier.
pub fn mask_condition(vol: &MultiContrastVolume, upred: &RegionMask) -> Result<MultiContrastVolume> {
    mask_condition_with(vol, upred, MASK_BACKGROUND)
}

/// Stacks the conditioning channels for `opts.variant`.
pub fn build_conditioning(opts: &ConditioningOptions, vol: &MultiContrastVolume, upred: &SoftPrediction) -> Result<Array4<f32>> {
    if vol.dims() != upred.dims() {
        let d = vol.dims();
        let u = upred.dims();
        return Err(Error::shape(&[d[0], d[1], d[2]], &[u[0], u[1], u[2]]));
    }
    let binary = RegionMask {
        channels: upred.threshold(opts.threshold)?,
        spacing: upred.spacing,
    };
    let pred_channels = if opts.soft_baseline {
        upred.probs.clone()
    } else {
        binary.channels.mapv(f32::from)
    };
    Ok(match opts.variant {
        ConditioningVariant::PredOnly => pred_channels,
        ConditioningVariant::ConcatMriPred => {
            concatenate(Axis(0), &[pred_channels.view(), vol.data.view()]).expect("matching spatial dims")
        }
        ConditioningVariant::MaskedMri => mask_condition_with(vol, &binary, opts.mask_background)?.data,
    })
}
