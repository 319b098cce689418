//! In-memory training and evaluation cases.

use ndarray::Array4;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::labels::to_regions;
use crate::nn::{Real, Tensor};
use crate::phantom::{generate_case, PhantomSpec};
use crate::preprocess::znorm_rescale;
use crate::volume::{DisjointLabelMap, MultiContrastVolume, RegionMask};

/// One preprocessed subject with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub image: MultiContrastVolume,
    pub labels: DisjointLabelMap,
    pub regions: RegionMask,
}

impl Case {
    /// Preprocesses a raw volume and derives region targets.
    pub fn new(id: impl Into<String>, raw: &MultiContrastVolume, labels: DisjointLabelMap) -> Result<Self> {
        let image = znorm_rescale(raw)?;
        let regions = to_regions(&labels)?;
        Ok(Self {
            id: id.into(),
            image,
            labels,
            regions,
        })
    }
}

/// Case identifier used on disk and in reports.
pub fn case_id(index: usize) -> String {
    format!("case_{index:04}")
}

/// Seed of phantom case `index` in a dataset with base seed `base`.
pub fn case_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Generates `count` preprocessed phantom cases; each case is seeded
/// independently so generation order does not matter.
pub fn phantom_cases(spec: &PhantomSpec, count: usize) -> Result<Vec<Case>> {
    (0..count)
        .map(|i| {
            let (raw, labels) = generate_case(&spec.with_seed(case_seed(spec.seed, i)), i as u64)?;
            Case::new(case_id(i), &raw, labels)
        })
        .collect()
}

/// Checksum over case ids, images and targets, in order.
pub fn checksum(cases: &[Case]) -> String {
    let mut h = Sha256::new();
    for c in cases {
        h.update(c.id.as_bytes());
        for v in c.image.data.iter() {
            h.update(v.to_le_bytes());
        }
        h.update(c.regions.channels.iter().copied().collect::<Vec<u8>>());
    }
    hex::encode(h.finalize())
}

pub(crate) fn array_to_tensor<F: Real, T: Copy + Into<f64>>(a: &Array4<T>) -> Tensor<F> {
    Tensor::new(
        a.shape().to_vec(),
        a.iter().map(|&v| F::c(v.into())).collect(),
    )
}

pub(crate) fn tensor_to_array(t: &Tensor<f32>) -> Array4<f32> {
    Array4::from_shape_vec((t.shape[0], t.shape[1], t.shape[2], t.shape[3]), t.data.clone())
        .expect("tensor is (C, D, W, H)")
}
