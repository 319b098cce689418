//! Discrepancy targets and the bit-flip correction of a baseline mask.
//!
//! A discrepancy mask marks the voxels a baseline prediction got wrong,
//! per region channel. Correcting the baseline flips exactly those voxels:
//!
//! ```
//! use ndarray::Array4;
//! use segrefine::discrepancy::{apply_correction, discrepancy_target};
//! use segrefine::volume::RegionMask;
//!
//! let u = RegionMask::new(Array4::from_shape_vec((3, 1, 1, 1), vec![1, 0, 1]).unwrap(), [1.0; 3]).unwrap();
//! let g = RegionMask::new(Array4::from_shape_vec((3, 1, 1, 1), vec![0, 0, 1]).unwrap(), [1.0; 3]).unwrap();
//! let delta = discrepancy_target(&u, &g).unwrap();
//! assert_eq!(delta.channels.as_slice().unwrap(), &[1, 0, 0]);
//! assert_eq!(apply_correction(&u, &delta).unwrap(), g);
//! ```

use ndarray::{Array4, Zip};

use crate::error::{Error, Result};
use crate::volume::{check_binary, Provenance, RegionMask, SoftPrediction, Spacing};

/// Binary `(3, D, W, H)` mask of voxels where a baseline disagrees with a
/// reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyMask {
    pub channels: Array4<u8>,
    pub spacing: Spacing,
    pub provenance: Provenance,
}

impl DiscrepancyMask {
    pub fn new(channels: Array4<u8>, spacing: Spacing, provenance: Provenance) -> Result<Self> {
        check_binary(channels.iter().copied())?;
        Ok(Self {
            channels,
            spacing,
            provenance,
        })
    }

    /// Number of flagged voxels over all channels.
    pub fn count(&self) -> usize {
        self.channels.iter().map(|&v| v as usize).sum()
    }
}

fn check_pair(a: &Array4<u8>, b: &Array4<u8>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    check_binary(a.iter().copied())?;
    check_binary(b.iter().copied())
}

fn xor(a: &Array4<u8>, b: &Array4<u8>) -> Array4<u8> {
    let mut out = Array4::zeros(a.raw_dim());
    Zip::from(&mut out).and(a).and(b).for_each(|o, &x, &y| *o = x ^ y);
    out
}

/// `|upred - gt|` voxel-wise, which for bits is XOR.
pub fn discrepancy_target(upred: &RegionMask, gt: &RegionMask) -> Result<DiscrepancyMask> {
    check_pair(&upred.channels, &gt.channels)?;
    Ok(DiscrepancyMask {
        channels: xor(&upred.channels, &gt.channels),
        spacing: upred.spacing,
        provenance: Provenance::Derived {
            note: "baseline prediction xor reference mask".into(),
        },
    })
}

/// Flips every baseline voxel flagged in `delta_hat`.
pub fn apply_correction(upred: &RegionMask, delta_hat: &DiscrepancyMask) -> Result<RegionMask> {
    check_pair(&upred.channels, &delta_hat.channels)?;
    Ok(RegionMask {
        channels: xor(&upred.channels, &delta_hat.channels),
        spacing: upred.spacing,
    })
}

/// Channel-wise `soft_delta >= threshold`.
pub fn binarize_discrepancy(soft_delta: &SoftPrediction, threshold: f32) -> Result<DiscrepancyMask> {
    Ok(DiscrepancyMask {
        channels: soft_delta.threshold(threshold)?,
        spacing: soft_delta.spacing,
        provenance: Provenance::Derived {
            note: format!("thresholded at {threshold}"),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(bits: Vec<u8>, dims: [usize; 3]) -> RegionMask {
        RegionMask::new(Array4::from_shape_vec((3, dims[0], dims[1], dims[2]), bits).unwrap(), [1.0; 3]).unwrap()
    }

    fn delta(bits: Vec<u8>, dims: [usize; 3]) -> DiscrepancyMask {
        let m = mask(bits, dims);
        DiscrepancyMask::new(m.channels, m.spacing, Provenance::Derived { note: "test".into() }).unwrap()
    }

    #[test]
    fn truth_table() {
        // (u, g) over all four bit pairs, in the first channel.
        let u = mask(vec![0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0], [1, 1, 4]);
        let g = mask(vec![0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0], [1, 1, 4]);
        let d = discrepancy_target(&u, &g).unwrap();
        assert_eq!(&d.channels.as_slice().unwrap()[..4], &[0, 1, 1, 0]);
    }

    #[test]
    fn flips() {
        let u = mask(vec![1, 0, 1], [1, 1, 1]);
        let d = delta(vec![1, 1, 0], [1, 1, 1]);
        assert_eq!(apply_correction(&u, &d).unwrap().channels.as_slice().unwrap(), &[0, 1, 1]);
        let zero = delta(vec![0, 0, 0], [1, 1, 1]);
        assert_eq!(apply_correction(&u, &zero).unwrap(), u);
    }

    #[test]
    fn zero_prediction_gives_ground_truth() {
        let g = mask(vec![1, 0, 1, 1, 0, 0], [1, 1, 2]);
        let d = discrepancy_target(&RegionMask::zeros([1, 1, 2], [1.0; 3]), &g).unwrap();
        assert_eq!(d.channels, g.channels);
        assert_eq!(discrepancy_target(&g, &g).unwrap().count(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = mask(vec![1, 0, 1], [1, 1, 1]);
        let other = RegionMask::zeros([1, 1, 2], [1.0; 3]);
        assert!(matches!(discrepancy_target(&g, &other), Err(Error::ShapeMismatch { .. })));
        let mut bad = g.clone();
        bad.channels[[0, 0, 0, 0]] = 2;
        assert!(matches!(discrepancy_target(&bad, &g), Err(Error::NonBinary { .. })));
        assert!(DiscrepancyMask::new(bad.channels, [1.0; 3], Provenance::Derived { note: String::new() }).is_err());
    }

    #[test]
    fn binarize_convention() {
        let soft = |v: f32| SoftPrediction {
            probs: Array4::from_elem((3, 2, 2, 2), v),
            spacing: [1.0; 3],
        };
        assert_eq!(binarize_discrepancy(&soft(0.9), 0.5).unwrap().count(), 24);
        assert_eq!(binarize_discrepancy(&soft(0.1), 0.5).unwrap().count(), 0);
        assert_eq!(binarize_discrepancy(&soft(0.5), 0.5).unwrap().count(), 24);
    }

    fn pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, [usize; 3])> {
        (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(d, w, h)| {
            let n = 3 * d * w * h;
            (
                proptest::collection::vec(0u8..2, n),
                proptest::collection::vec(0u8..2, n),
                Just([d, w, h]),
            )
        })
    }

    proptest! {
        #[test]
        fn correction_recovers_reference((u, g, dims) in pair()) {
            let (u, g) = (mask(u, dims), mask(g, dims));
            prop_assert_eq!(apply_correction(&u, &discrepancy_target(&u, &g).unwrap()).unwrap(), g);
        }

        #[test]
        fn correction_is_self_inverse((u, d, dims) in pair()) {
            let (u, d) = (mask(u, dims), delta(d, dims));
            let twice = apply_correction(&apply_correction(&u, &d).unwrap(), &d).unwrap();
            prop_assert_eq!(twice, u);
        }

        #[test]
        fn target_is_symmetric_and_counts_errors((u, g, dims) in pair()) {
            let (um, gm) = (mask(u.clone(), dims), mask(g.clone(), dims));
            let d = discrepancy_target(&um, &gm).unwrap();
            prop_assert_eq!(&d.channels, &discrepancy_target(&gm, &um).unwrap().channels);
            let hamming = u.iter().zip(&g).filter(|(a, b)| a != b).count();
            prop_assert_eq!(d.count(), hamming);
        }
    }
}
