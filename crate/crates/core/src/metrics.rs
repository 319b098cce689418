//! Dice overlap and 95th-percentile Hausdorff distance per tumor region.
//!
//! Conventions, all carried in [`MetricConventions`]:
//!
//! * Dice of two empty masks is 1.
//! * A voxel is on the boundary of its set when at least one of its six
//!   face neighbours is outside the set; neighbours beyond the grid count as
//!   outside.
//! * Directed distances run from every boundary voxel of one set to the
//!   nearest boundary voxel of the other, in millimetres.
//! * The 95th percentile interpolates linearly between order statistics
//!   (position `0.95 * (n - 1)` in the sorted list).
//! * HD95 is 0 when both masks are empty and a sentinel (373.13 mm) when
//!   exactly one is.

use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Region, RegionMask, Spacing};

/// HD95 reported when exactly one of the two masks is empty.
pub const HD95_SENTINEL: f64 = 373.13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConventions {
    pub empty_dice: f64,
    pub hd95_sentinel: f64,
    pub percentile: f64,
}

impl Default for MetricConventions {
    fn default() -> Self {
        Self {
            empty_dice: 1.0,
            hd95_sentinel: HD95_SENTINEL,
            percentile: 95.0,
        }
    }
}

fn check_shapes(a: &ArrayView3<u8>, b: &ArrayView3<u8>) -> Result<()> {
    if a.shape() != b.shape() {
        Err(Error::shape(a.shape(), b.shape()))
    } else {
        Ok(())
    }
}

/// `2|P ∩ G| / (|P| + |G|)`, with `empty` returned when both are empty.
pub fn dice_with(pred: ArrayView3<u8>, gt: ArrayView3<u8>, empty: f64) -> Result<f64> {
    check_shapes(&pred, &gt)?;
    let (mut inter, mut total) = (0usize, 0usize);
    Zip::from(&pred).and(&gt).for_each(|&p, &g| {
        let (p, g) = (p != 0, g != 0);
        inter += usize::from(p && g);
        total += usize::from(p) + usize::from(g);
    });
    Ok(if total == 0 {
        empty
    } else {
        2.0 * inter as f64 / total as f64
    })
}

pub fn dice(pred: ArrayView3<u8>, gt: ArrayView3<u8>) -> Result<f64> {
    dice_with(pred, gt, MetricConventions::default().empty_dice)
}

/// Voxels of `mask` with at least one face neighbour outside it.
pub fn boundary(mask: ArrayView3<u8>) -> Array3<bool> {
    let (d, w, h) = mask.dim();
    let inside = |i: isize, j: isize, k: isize| {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < d
            && (j as usize) < w
            && (k as usize) < h
            && mask[[i as usize, j as usize, k as usize]] != 0
    };
    Array3::from_shape_fn((d, w, h), |(i, j, k)| {
        if mask[[i, j, k]] == 0 {
            return false;
        }
        let (i, j, k) = (i as isize, j as isize, k as isize);
        [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
            .iter()
            .any(|&(a, b, c)| !inside(i + a, j + b, k + c))
    })
}

/// Exact squared distance along one line to the nearest finite entry of
/// `f`, by the lower envelope of parabolas `w^2 (q - p)^2 + f[p]`.
fn edt_line(f: &[f64], w2: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let cross = |p: usize, q: usize, f: &[f64]| {
        let (pf, qf) = (p as f64, q as f64);
        ((f[q] + w2 * qf * qf) - (f[p] + w2 * pf * pf)) / (2.0 * w2 * (qf - pf))
    };
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        while let Some(&p) = v.last() {
            let s = cross(p, q, f);
            if s <= *z.last().expect("z tracks v") {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        let s = match v.last() {
            Some(&p) => cross(p, q, f),
            None => f64::NEG_INFINITY,
        };
        v.push(q);
        z.push(s);
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = w2 * dq * dq + f[v[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest `true`
/// voxel of `features`; infinite everywhere if there are none.
pub fn squared_edt(features: &Array3<bool>, spacing: Spacing) -> Array3<f64> {
    let mut dist = features.mapv(|b| if b { 0.0 } else { f64::INFINITY });
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let w2 = spacing[axis] * spacing[axis];
        let n = dist.shape()[axis];
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        for mut lane in dist.lanes_mut(ndarray::Axis(axis)) {
            for (l, x) in line.iter_mut().zip(lane.iter()) {
                *l = *x;
            }
            edt_line(&line, w2, &mut out, &mut v, &mut z);
            for (x, o) in lane.iter_mut().zip(&out) {
                *x = *o;
            }
        }
    }
    dist
}

/// Linear-interpolation percentile of unsorted `values`, `q` in `[0, 100]`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = pos - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}

fn directed(from: &Array3<bool>, to_edt: &Array3<f64>) -> Vec<f64> {
    from.iter()
        .zip(to_edt.iter())
        .filter(|(b, _)| **b)
        .map(|(_, d)| d.sqrt())
        .collect()
}

pub fn hd95_with(pred: ArrayView3<u8>, gt: ArrayView3<u8>, spacing: Spacing, conv: &MetricConventions) -> Result<f64> {
    check_shapes(&pred, &gt)?;
    let (p_empty, g_empty) = (pred.iter().all(|&v| v == 0), gt.iter().all(|&v| v == 0));
    match (p_empty, g_empty) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(conv.hd95_sentinel),
        _ => {}
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    let mut p_to_g = directed(&bp, &squared_edt(&bg, spacing));
    let mut g_to_p = directed(&bg, &squared_edt(&bp, spacing));
    Ok(percentile(&mut p_to_g, conv.percentile).max(percentile(&mut g_to_p, conv.percentile)))
}

/// 95th-percentile symmetric boundary distance in mm.
pub fn hd95(pred: ArrayView3<u8>, gt: ArrayView3<u8>, spacing: Spacing) -> Result<f64> {
    hd95_with(pred, gt, spacing, &MetricConventions::default())
}

/// Scores of one region of one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region: Region,
    pub dice: f64,
    pub hd95: f64,
    /// `hd95` is the one-empty sentinel rather than a distance.
    pub sentinel: bool,
}

/// Per-region scores in report order (WT, ET, TC) with their averages.
///
/// `hd95_avg` averages the non-sentinel regions; it is the sentinel when
/// all three are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScores {
    pub regions: Vec<RegionScore>,
    pub dice_avg: f64,
    pub hd95_avg: f64,
}

impl CaseScores {
    pub fn get(&self, region: Region) -> &RegionScore {
        self.regions.iter().find(|r| r.region == region).expect("all regions scored")
    }
}

pub fn evaluate_case_with(pred: &RegionMask, gt: &RegionMask, spacing: Spacing, conv: &MetricConventions) -> Result<CaseScores> {
    if pred.channels.shape() != gt.channels.shape() {
        return Err(Error::shape(gt.channels.shape(), pred.channels.shape()));
    }
    let regions = Region::REPORT_ORDER
        .iter()
        .map(|&region| {
            let (p, g) = (pred.region(region), gt.region(region));
            let hd = hd95_with(p, g, spacing, conv)?;
            let one_empty = p.iter().all(|&v| v == 0) != g.iter().all(|&v| v == 0);
            Ok(RegionScore {
                region,
                dice: dice_with(p, g, conv.empty_dice)?,
                hd95: hd,
                sentinel: one_empty,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dice_avg = regions.iter().map(|r| r.dice).sum::<f64>() / regions.len() as f64;
    let finite: Vec<f64> = regions.iter().filter(|r| !r.sentinel).map(|r| r.hd95).collect();
    let hd95_avg = if finite.is_empty() {
        conv.hd95_sentinel
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(CaseScores {
        regions,
        dice_avg,
        hd95_avg,
    })
}

/// Scores every region of one case under the default conventions.
pub fn evaluate_case(pred: &RegionMask, gt: &RegionMask, spacing: Spacing) -> Result<CaseScores> {
    evaluate_case_with(pred, gt, spacing, &MetricConventions::default())
}

/// Mean scores of one region across cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: Region,
    pub dice: f64,
    /// Mean over non-sentinel cases; `None` if every case was a sentinel.
    pub hd95: Option<f64>,
    pub hd95_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub regions: Vec<RegionSummary>,
    pub dice_avg: f64,
    /// Mean of the available per-region HD95 means.
    pub hd95_avg: Option<f64>,
}

impl Summary {
    pub fn get(&self, region: Region) -> &RegionSummary {
        self.regions.iter().find(|r| r.region == region).expect("all regions summarized")
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-region means across cases; sentinel HD95 values are left out and
/// counted.
pub fn aggregate(scores: &[CaseScores]) -> Result<Summary> {
    if scores.is_empty() {
        return Err(Error::Empty("case scores"));
    }
    let regions: Vec<RegionSummary> = Region::REPORT_ORDER
        .iter()
        .map(|&region| {
            let per_case: Vec<&RegionScore> = scores.iter().map(|s| s.get(region)).collect();
            let dice: Vec<f64> = per_case.iter().map(|r| r.dice).collect();
            let hd: Vec<f64> = per_case.iter().filter(|r| !r.sentinel).map(|r| r.hd95).collect();
            RegionSummary {
                region,
                dice: mean(&dice).expect("nonempty"),
                hd95: mean(&hd),
                hd95_excluded: per_case.len() - hd.len(),
            }
        })
        .collect();
    let dice_avg = mean(&regions.iter().map(|r| r.dice).collect::<Vec<_>>()).expect("three regions");
    let hd95_avg = mean(&regions.iter().filter_map(|r| r.hd95).collect::<Vec<_>>());
    Ok(Summary {
        cases: scores.len(),
        regions,
        dice_avg,
        hd95_avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    fn grid(dims: (usize, usize, usize), on: &[(usize, usize, usize)]) -> Array3<u8> {
        let mut a = Array3::zeros(dims);
        for &p in on {
            a[p] = 1;
        }
        a
    }

    #[test]
    fn dice_examples() {
        let a = grid((1, 1, 3), &[(0, 0, 0), (0, 0, 1)]);
        let b = grid((1, 1, 3), &[(0, 0, 1), (0, 0, 2)]);
        assert_eq!(dice(a.view(), b.view()).unwrap(), 0.5);
        assert_eq!(dice(a.view(), a.view()).unwrap(), 1.0);
        let c = grid((1, 1, 3), &[(0, 0, 2)]);
        assert_eq!(dice(a.view(), c.view()).unwrap(), 0.0);
        let e = grid((1, 1, 3), &[]);
        assert_eq!(dice(e.view(), e.view()).unwrap(), 1.0);
        assert!(dice(a.view(), grid((1, 1, 2), &[]).view()).is_err());
    }

    #[test]
    fn hd95_examples() {
        let a = grid((1, 1, 8), &[(0, 0, 1)]);
        let b = grid((1, 1, 8), &[(0, 0, 4)]);
        assert_eq!(hd95(a.view(), b.view(), [1.0; 3]).unwrap(), 3.0);
        assert_eq!(hd95(a.view(), b.view(), [1.0, 1.0, 0.5]).unwrap(), 1.5);
        assert_eq!(hd95(a.view(), a.view(), [1.0; 3]).unwrap(), 0.0);
        let e = grid((1, 1, 8), &[]);
        assert_eq!(hd95(e.view(), e.view(), [1.0; 3]).unwrap(), 0.0);
        assert_eq!(hd95(a.view(), e.view(), [1.0; 3]).unwrap(), HD95_SENTINEL);
    }

    #[test]
    fn edt_matches_direct_minimum() {
        let f = grid((4, 5, 3), &[(0, 0, 0), (3, 4, 2), (2, 1, 1)]).mapv(|v| v == 1);
        let sp = [0.7, 1.3, 2.0];
        let edt = squared_edt(&f, sp);
        for ((i, j, k), &d) in edt.indexed_iter() {
            let best = f
                .indexed_iter()
                .filter(|(_, b)| **b)
                .map(|((a, b, c), _)| {
                    let dx = (i as f64 - a as f64) * sp[0];
                    let dy = (j as f64 - b as f64) * sp[1];
                    let dz = (k as f64 - c as f64) * sp[2];
                    dx * dx + dy * dy + dz * dz
                })
                .fold(f64::INFINITY, f64::min);
            assert!((d - best).abs() < 1e-12);
        }
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&mut [3.0, 1.0, 2.0], 50.0), 2.0);
        assert!((percentile(&mut [0.0, 10.0], 95.0) - 9.5).abs() < 1e-12);
        assert_eq!(percentile(&mut [4.0], 95.0), 4.0);
    }

    #[test]
    fn boundary_of_solid_cube_excludes_core() {
        let mut m = Array3::zeros((5, 5, 5));
        m.slice_mut(ndarray::s![1..4, 1..4, 1..4]).fill(1u8);
        let b = boundary(m.view());
        assert!(!b[[2, 2, 2]]);
        assert_eq!(b.iter().filter(|v| **v).count(), 26);
        let full = Array3::from_elem((2, 2, 2), 1u8);
        assert!(boundary(full.view()).iter().all(|v| *v));
    }

    #[test]
    fn case_scores_order_and_averages() {
        let mut ch = Array4::zeros((3, 4, 4, 4));
        ch[[0, 1, 1, 1]] = 1;
        ch[[0, 1, 1, 2]] = 1;
        ch[[1, 1, 1, 1]] = 1;
        let gt = RegionMask::new(ch.clone(), [1.0; 3]).unwrap();
        let s = evaluate_case(&gt, &gt, [1.0; 3]).unwrap();
        let order: Vec<Region> = s.regions.iter().map(|r| r.region).collect();
        assert_eq!(order, vec![Region::WholeTumor, Region::Enhancing, Region::TumorCore]);
        assert!(s.regions.iter().all(|r| r.dice == 1.0 && r.hd95 == 0.0));
        let mut pred = ch;
        pred[[0, 1, 1, 2]] = 0;
        let s = evaluate_case(&RegionMask::new(pred, [1.0; 3]).unwrap(), &gt, [1.0; 3]).unwrap();
        let mean = s.regions.iter().map(|r| r.dice).sum::<f64>() / 3.0;
        assert_eq!(s.dice_avg, mean);
    }

    fn scores(dice: f64, hd: f64, sentinel: bool) -> CaseScores {
        let regions = Region::REPORT_ORDER
            .iter()
            .map(|&region| RegionScore {
                region,
                dice,
                hd95: hd,
                sentinel,
            })
            .collect();
        CaseScores {
            regions,
            dice_avg: dice,
            hd95_avg: hd,
        }
    }

    #[test]
    fn aggregate_rules() {
        assert!(aggregate(&[]).is_err());
        let one = aggregate(&[scores(0.7, 2.0, false)]).unwrap();
        assert!((one.dice_avg - 0.7).abs() < 1e-12);
        assert_eq!(one.get(Region::Enhancing).dice, 0.7);
        assert_eq!(one.hd95_avg, Some(2.0));
        let two = aggregate(&[scores(0.8, 1.0, false), scores(1.0, 3.0, false)]).unwrap();
        assert!((two.get(Region::WholeTumor).dice - 0.9).abs() < 1e-12);
        let three = aggregate(&[
            scores(0.8, 1.0, false),
            scores(0.0, HD95_SENTINEL, true),
            scores(1.0, 3.0, false),
        ])
        .unwrap();
        let wt = three.get(Region::WholeTumor);
        assert_eq!(wt.hd95, Some(2.0));
        assert_eq!(wt.hd95_excluded, 1);
    }
}
