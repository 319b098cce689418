//! Volumetric containers shared by every stage of the pipeline.
//!
//! All grids are stored channel-first, `(C, D, W, H)`, in standard (row-major)
//! layout. Binary grids use `u8` holding `0` or `1`; validation is explicit so
//! that predicted masks coming from disk or from a network can be checked
//! rather than trusted.

use ndarray::{Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::PhantomSpec;

/// Physical voxel size in millimetres along `(D, W, H)`.
pub type Spacing = [f64; 3];

/// Number of MRI contrasts in an input volume.
pub const CONTRASTS: usize = 4;
/// Number of overlapping tumor regions in a [`RegionMask`].
pub const REGIONS: usize = 3;

/// Where a volume came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Phantom { case_index: u64, spec: PhantomSpec },
    File { path: String },
    Derived { note: String },
}

/// Four co-registered intensity channels `(4, D, W, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiContrastVolume {
    pub data: Array4<f32>,
    pub spacing: Spacing,
    pub meta: Provenance,
    /// Voxels that carried signal before normalization. Set by
    /// [`crate::preprocess::znorm_rescale`]; `None` for raw volumes.
    pub foreground: Option<Array3<bool>>,
}

impl MultiContrastVolume {
    pub fn new(data: Array4<f32>, spacing: Spacing, meta: Provenance) -> Result<Self> {
        if data.shape()[0] != CONTRASTS {
            return Err(Error::shape(
                &[CONTRASTS, data.shape()[1], data.shape()[2], data.shape()[3]],
                data.shape(),
            ));
        }
        validate_spacing(spacing)?;
        Ok(Self {
            data,
            spacing,
            meta,
            foreground: None,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        spatial(self.data.shape())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Union over channels of nonzero voxels.
    pub fn nonzero_mask(&self) -> Array3<bool> {
        let mut mask = Array3::from_elem(self.dims(), false);
        for channel in self.data.axis_iter(Axis(0)) {
            ndarray::Zip::from(&mut mask)
                .and(&channel)
                .for_each(|m, &v| *m |= v != 0.0);
        }
        mask
    }
}

/// Disjoint annotation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum LabelCode {
    Background = 0,
    Necrotic = 1,
    Edema = 2,
    Enhancing = 3,
}

impl LabelCode {
    pub fn from_u8(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Background),
            1 => Some(Self::Necrotic),
            2 => Some(Self::Edema),
            3 => Some(Self::Enhancing),
            _ => None,
        }
    }
}

/// Per-voxel disjoint labels `(D, W, H)` with codes in `{0, 1, 2, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisjointLabelMap {
    pub labels: Array3<u8>,
    pub spacing: Spacing,
}

impl DisjointLabelMap {
    pub fn new(labels: Array3<u8>, spacing: Spacing) -> Result<Self> {
        validate_spacing(spacing)?;
        let map = Self { labels, spacing };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        match self.labels.iter().position(|&c| c > 3) {
            Some(index) => Err(Error::InvalidLabel {
                code: self.labels.iter().nth(index).copied().unwrap_or_default(),
                index,
            }),
            None => Ok(()),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.labels.shape();
        [s[0], s[1], s[2]]
    }

    pub fn count(&self, code: LabelCode) -> usize {
        self.labels.iter().filter(|&&c| c == code as u8).count()
    }
}

/// Overlapping tumor regions, in channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "WT")]
    WholeTumor = 0,
    #[serde(rename = "TC")]
    TumorCore = 1,
    #[serde(rename = "ET")]
    Enhancing = 2,
}

impl Region {
    /// Channel order of [`RegionMask`].
    pub const CHANNELS: [Region; 3] = [Region::WholeTumor, Region::TumorCore, Region::Enhancing];
    /// Column order used in reports: WT, ET, TC.
    pub const REPORT_ORDER: [Region; 3] =
        [Region::WholeTumor, Region::Enhancing, Region::TumorCore];

    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Region::WholeTumor => "WT",
            Region::TumorCore => "TC",
            Region::Enhancing => "ET",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        match s {
            "WT" => Some(Region::WholeTumor),
            "TC" => Some(Region::TumorCore),
            "ET" => Some(Region::Enhancing),
            _ => None,
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Binary `(3, D, W, H)` masks over WT, TC and ET.
///
/// Masks built from labels always nest (ET ⊆ TC ⊆ WT). Predicted masks may
/// not; [`RegionMask::nesting_violations`] reports how many voxels break it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub channels: Array4<u8>,
    pub spacing: Spacing,
}

impl RegionMask {
    pub fn new(channels: Array4<u8>, spacing: Spacing) -> Result<Self> {
        if channels.shape()[0] != REGIONS {
            let s = channels.shape();
            return Err(Error::shape(&[REGIONS, s[1], s[2], s[3]], s));
        }
        validate_spacing(spacing)?;
        let mask = Self { channels, spacing };
        mask.validate_binary()?;
        Ok(mask)
    }

    pub fn zeros(dims: [usize; 3], spacing: Spacing) -> Self {
        Self {
            channels: Array4::zeros((REGIONS, dims[0], dims[1], dims[2])),
            spacing,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        spatial(self.channels.shape())
    }

    pub fn region(&self, region: Region) -> ArrayView3<'_, u8> {
        self.channels.index_axis(Axis(0), region.channel())
    }

    pub fn validate_binary(&self) -> Result<()> {
        check_binary(self.channels.iter().copied())
    }

    /// Voxels where ET=1 without TC, or TC=1 without WT.
    pub fn nesting_violations(&self) -> usize {
        let wt = self.region(Region::WholeTumor);
        let tc = self.region(Region::TumorCore);
        let et = self.region(Region::Enhancing);
        ndarray::Zip::from(&wt)
            .and(&tc)
            .and(&et)
            .fold(0, |acc, &w, &t, &e| acc + usize::from((e > t) || (t > w) || (e > w)))
    }
}

/// Per-region probabilities `(3, D, W, H)` in `[0, 1]`.
///
/// Regions overlap, so channels are independent sigmoids, not a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction {
    pub probs: Array4<f32>,
    pub spacing: Spacing,
}

impl SoftPrediction {
    pub fn dims(&self) -> [usize; 3] {
        spatial(self.probs.shape())
    }

    pub fn in_unit_range(&self) -> bool {
        self.probs.iter().all(|p| (0.0..=1.0).contains(p))
    }

    /// Thresholds each channel with the `>=` convention.
    pub fn threshold(&self, threshold: f32) -> Result<Array4<u8>> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must lie in (0,1), got {threshold}"
            )));
        }
        Ok(self.probs.mapv(|p| u8::from(p >= threshold)))
    }
}

pub(crate) fn check_binary(values: impl Iterator<Item = u8>) -> Result<()> {
    for (index, value) in values.enumerate() {
        if value > 1 {
            return Err(Error::NonBinary { value, index });
        }
    }
    Ok(())
}

pub(crate) fn spatial(shape: &[usize]) -> [usize; 3] {
    [shape[1], shape[2], shape[3]]
}

pub(crate) fn validate_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )))
    }
}
