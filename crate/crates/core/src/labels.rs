//! Conversion between disjoint annotation codes and overlapping regions.
//!
//! WT covers every tumor code, TC covers necrosis and enhancing tumor, ET
//! covers enhancing tumor only. The inverse mapping uses the precedence
//! ET > TC > WT, which inverts [`to_regions`] exactly.

use ndarray::{Array3, Array4, Zip};

use crate::error::Result;
use crate::volume::{DisjointLabelMap, LabelCode, RegionMask, REGIONS};

pub fn to_regions(labels: &DisjointLabelMap) -> Result<RegionMask> {
    labels.validate()?;
    let [d, w, h] = labels.dims();
    let mut channels = Array4::<u8>::zeros((REGIONS, d, w, h));
    for ((c, x, y, z), out) in channels.indexed_iter_mut() {
        let code = labels.labels[[x, y, z]];
        *out = u8::from(match c {
            0 => code != 0,
            1 => code == LabelCode::Necrotic as u8 || code == LabelCode::Enhancing as u8,
            _ => code == LabelCode::Enhancing as u8,
        });
    }
    Ok(RegionMask {
        channels,
        spacing: labels.spacing,
    })
}

/// Recovers disjoint labels from a (possibly non-nested) region mask.
///
/// Returns the label map and the number of voxels whose channels violated
/// the ET ⊆ TC ⊆ WT nesting and were resolved by precedence.
pub fn from_regions(mask: &RegionMask) -> (DisjointLabelMap, usize) {
    let [d, w, h] = mask.dims();
    let mut labels = Array3::<u8>::zeros((d, w, h));
    let mut violations = 0usize;
    let wt = mask.region(crate::volume::Region::WholeTumor);
    let tc = mask.region(crate::volume::Region::TumorCore);
    let et = mask.region(crate::volume::Region::Enhancing);
    Zip::from(&mut labels)
        .and(&wt)
        .and(&tc)
        .and(&et)
        .for_each(|out, &w, &t, &e| {
            let (w, t, e) = (w != 0, t != 0, e != 0);
            if (e && !t) || (t && !w) || (e && !w) {
                violations += 1;
            }
            *out = if e {
                LabelCode::Enhancing as u8
            } else if t {
                LabelCode::Necrotic as u8
            } else if w {
                LabelCode::Edema as u8
            } else {
                LabelCode::Background as u8
            };
        });
    (
        DisjointLabelMap {
            labels,
            spacing: mask.spacing,
        },
        violations,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;

    fn single(code: u8) -> DisjointLabelMap {
        DisjointLabelMap::new(Array3::from_elem((1, 1, 1), code), [1.0; 3]).unwrap()
    }

    fn triple(mask: &RegionMask) -> (u8, u8, u8) {
        let c = &mask.channels;
        (c[[0, 0, 0, 0]], c[[1, 0, 0, 0]], c[[2, 0, 0, 0]])
    }

    #[test]
    fn edema_is_whole_tumor_only() {
        assert_eq!(triple(&to_regions(&single(2)).unwrap()), (1, 0, 0));
    }

    #[test]
    fn necrosis_is_in_core() {
        assert_eq!(triple(&to_regions(&single(1)).unwrap()), (1, 1, 0));
    }

    #[test]
    fn background_is_empty() {
        assert_eq!(triple(&to_regions(&single(0)).unwrap()), (0, 0, 0));
        assert_eq!(triple(&to_regions(&single(3)).unwrap()), (1, 1, 1));
    }

    fn mask_of(wt: u8, tc: u8, et: u8) -> RegionMask {
        let channels = Array::from_shape_vec((3, 1, 1, 1), vec![wt, tc, et]).unwrap();
        RegionMask::new(channels, [1.0; 3]).unwrap()
    }

    #[test]
    fn precedence_rules() {
        let (l, v) = from_regions(&mask_of(1, 1, 1));
        assert_eq!((l.labels[[0, 0, 0]], v), (3, 0));
        let (l, v) = from_regions(&mask_of(1, 0, 0));
        assert_eq!((l.labels[[0, 0, 0]], v), (2, 0));
        let (l, v) = from_regions(&mask_of(0, 1, 0));
        assert_eq!((l.labels[[0, 0, 0]], v), (1, 1));
        let (l, v) = from_regions(&mask_of(0, 0, 1));
        assert_eq!((l.labels[[0, 0, 0]], v), (3, 1));
    }

    #[test]
    fn invalid_code_rejected() {
        assert!(DisjointLabelMap::new(Array3::from_elem((2, 2, 2), 4), [1.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(codes in proptest::collection::vec(0u8..4, 4 * 3 * 5)) {
            let labels = DisjointLabelMap::new(
                Array3::from_shape_vec((4, 3, 5), codes).unwrap(), [1.0, 1.5, 2.0]).unwrap();
            let regions = to_regions(&labels).unwrap();
            prop_assert_eq!(regions.nesting_violations(), 0);
            let (back, violations) = from_regions(&regions);
            prop_assert_eq!(violations, 0);
            prop_assert_eq!(back, labels);
        }
    }
}
