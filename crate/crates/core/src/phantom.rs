//! Deterministic synthetic multi-contrast phantoms with nested tumors.
//!
//! Each tumor is a randomly oriented-by-scaling ellipsoid whose radius is
//! modulated by a smooth angular deformation. Necrosis, enhancing rim and
//! edema are three shells of the same deformed shape, so the tumor core
//! always lies inside the whole tumor.

use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    DisjointLabelMap, LabelCode, MultiContrastVolume, Provenance, Spacing, CONTRASTS,
};

/// Largest per-axis stretch applied to a tumor ellipsoid.
const MAX_ANISOTROPY: f64 = 0.15;
/// Largest relative radius change from angular deformation.
const MAX_DEFORMATION: f64 = 0.15;
/// Width (mm) of the soft intensity transition across a tissue boundary.
const EDGE_WIDTH_MM: f64 = 0.5;
/// Smallest intensity assigned to a foreground voxel, so that exact zeros
/// always mean background.
const FOREGROUND_FLOOR: f32 = 1e-3;

/// Closed interval in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmRange {
    pub lo: f64,
    pub hi: f64,
}

impl MmRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

/// Outer radius intervals of the three tumor shells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusRanges {
    pub necrotic: MmRange,
    pub core: MmRange,
    pub whole: MmRange,
}

impl Default for RadiusRanges {
    fn default() -> Self {
        Self {
            necrotic: MmRange::new(1.5, 2.5),
            core: MmRange::new(3.5, 4.5),
            whole: MmRange::new(6.0, 8.5),
        }
    }
}

/// Mean intensity of each tissue class in one contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastProfile {
    pub name: String,
    pub tissue: f64,
    pub necrotic: f64,
    pub edema: f64,
    pub enhancing: f64,
    /// Amplitude of the smooth multiplicative texture field.
    pub texture: f64,
}

impl ContrastProfile {
    fn new(name: &str, tissue: f64, necrotic: f64, edema: f64, enhancing: f64) -> Self {
        Self {
            name: name.to_owned(),
            tissue,
            necrotic,
            edema,
            enhancing,
            texture: 0.05,
        }
    }

    /// T1, T1Gd, T2 and T2-FLAIR-like profiles.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new("t1", 0.60, 0.25, 0.45, 0.50),
            Self::new("t1gd", 0.55, 0.25, 0.45, 0.95),
            Self::new("t2", 0.45, 0.85, 0.80, 0.60),
            Self::new("flair", 0.40, 0.55, 0.90, 0.65),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub seed: u64,
    pub tumor_count: usize,
    pub radius_range: RadiusRanges,
    pub contrast_profiles: Vec<ContrastProfile>,
    pub noise_sigma: f64,
    /// Encoder levels the volumes must support; dims must be divisible by
    /// `2^(levels - 1)`.
    pub levels: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            spacing: [1.0; 3],
            seed: 0,
            tumor_count: 1,
            radius_range: RadiusRanges::default(),
            contrast_profiles: ContrastProfile::defaults(),
            noise_sigma: 0.03,
            levels: 3,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::InvalidConfig(format!(
                "phantom dims must each be >= 16, got {:?}",
                self.dims
            )));
        }
        if self.levels < 1 {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        let divisor = 1usize << (self.levels - 1);
        if self.dims.iter().any(|d| d % divisor != 0) {
            return Err(Error::Divisibility {
                dims: self.dims,
                divisor,
            });
        }
        crate::volume::validate_spacing(self.spacing)?;
        if self.tumor_count == 0 {
            return Err(Error::InvalidConfig("tumor_count must be >= 1".into()));
        }
        if self.contrast_profiles.len() != CONTRASTS {
            return Err(Error::InvalidConfig(format!(
                "expected {CONTRASTS} contrast profiles, got {}",
                self.contrast_profiles.len()
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        let r = &self.radius_range;
        for range in [r.necrotic, r.core, r.whole] {
            if !(range.lo > 0.0 && range.lo <= range.hi) {
                return Err(Error::InvalidConfig(format!("bad radius range {range:?}")));
            }
        }
        let shrink = (1.0 - MAX_ANISOTROPY) * (1.0 - MAX_DEFORMATION);
        let grow = (1.0 + MAX_ANISOTROPY) * (1.0 + MAX_DEFORMATION);
        // Shells stay ordered under any deformation since all three share it;
        // the thickness bounds below make empty shells unlikely, and
        // generation still verifies every code is present.
        let max_spacing = self.spacing.iter().cloned().fold(0.0, f64::max);
        let half_diag = 0.5 * self.spacing.iter().map(|s| s * s).sum::<f64>().sqrt();
        if r.necrotic.hi >= r.core.lo || r.core.hi >= r.whole.lo {
            return Err(Error::InvalidConfig(
                "radius ranges must be strictly ordered necrotic < core < whole".into(),
            ));
        }
        if r.necrotic.lo * shrink < half_diag {
            return Err(Error::InvalidConfig(
                "necrotic radius too small to cover a voxel centre".into(),
            ));
        }
        if (r.core.lo - r.necrotic.hi) * shrink < 0.5 * max_spacing
            || (r.whole.lo - r.core.hi) * shrink < 0.5 * max_spacing
        {
            return Err(Error::InvalidConfig(
                "tumor shells must be at least half a voxel thick".into(),
            ));
        }
        let reach = r.whole.hi * grow;
        for axis in 0..3 {
            let extent = self.dims[axis] as f64 * self.spacing[axis];
            if 2.0 * (reach + self.spacing[axis]) >= extent {
                return Err(Error::InvalidConfig(format!(
                    "whole-tumor radius up to {} mm cannot fit in axis {axis} ({extent} mm)",
                    r.whole.hi
                )));
            }
        }
        Ok(())
    }
}

struct Tumor {
    center: [f64; 3],
    inv_axes: [f64; 3],
    radii: [f64; 3],
    harmonics: Vec<([f64; 3], f64, f64)>,
}

impl Tumor {
    fn sample(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Self {
        let r = spec.radius_range;
        let pick = |rng: &mut ChaCha8Rng, range: crate::phantom::MmRange| {
            range.lo + (range.hi - range.lo) * rng.random::<f64>()
        };
        let radii = [
            pick(rng, r.necrotic),
            pick(rng, r.core),
            pick(rng, r.whole),
        ];
        let grow = (1.0 + MAX_ANISOTROPY) * (1.0 + MAX_DEFORMATION);
        let reach = radii[2] * grow;
        let mut center = [0.0; 3];
        for (axis, c) in center.iter_mut().enumerate() {
            let extent = spec.dims[axis] as f64 * spec.spacing[axis];
            let lo = reach + spec.spacing[axis];
            let hi = extent - reach - spec.spacing[axis];
            *c = lo + (hi - lo) * rng.random::<f64>();
        }
        let mut inv_axes = [1.0; 3];
        for a in inv_axes.iter_mut() {
            *a = 1.0 / (1.0 + MAX_ANISOTROPY * (2.0 * rng.random::<f64>() - 1.0));
        }
        // Three low-order angular harmonics whose amplitudes sum to at most
        // MAX_DEFORMATION.
        let mut harmonics = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut dir = [0.0; 3];
            for d in dir.iter_mut() {
                *d = 2.0 * rng.random::<f64>() - 1.0;
            }
            let freq = 1.0 + 2.0 * rng.random::<f64>();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            for d in dir.iter_mut() {
                *d *= freq / norm;
            }
            let amp = MAX_DEFORMATION / 3.0 * rng.random::<f64>();
            let phase = std::f64::consts::TAU * rng.random::<f64>();
            harmonics.push((dir, amp, phase));
        }
        Self {
            center,
            inv_axes,
            radii,
            harmonics,
        }
    }

    /// Deformation-normalized distance from the tumor centre in mm.
    fn rho(&self, p: [f64; 3]) -> f64 {
        let mut q = [0.0; 3];
        for i in 0..3 {
            q[i] = (p[i] - self.center[i]) * self.inv_axes[i];
        }
        let len = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        if len == 0.0 {
            return 0.0;
        }
        let u = [q[0] / len, q[1] / len, q[2] / len];
        let delta: f64 = self
            .harmonics
            .iter()
            .map(|(dir, amp, phase)| amp * (dir[0] * u[0] + dir[1] * u[1] + dir[2] * u[2] + phase).sin())
            .sum();
        len / (1.0 + delta)
    }
}

fn smooth_inside(radius: f64, rho: f64) -> f64 {
    1.0 / (1.0 + ((rho - radius) / EDGE_WIDTH_MM).exp())
}

/// Generates one phantom volume and its disjoint label map.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(MultiContrastVolume, DisjointLabelMap)> {
    generate_case(spec, 0)
}

/// Same as [`generate_phantom`] but records a dataset case index in the
/// provenance. The seed used is `spec.seed`.
pub fn generate_case(
    spec: &PhantomSpec,
    case_index: u64,
) -> Result<(MultiContrastVolume, DisjointLabelMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tumors: Vec<Tumor> = (0..spec.tumor_count)
        .map(|_| Tumor::sample(spec, &mut rng))
        .collect();

    let [d, w, h] = spec.dims;
    let extent = [
        d as f64 * spec.spacing[0],
        w as f64 * spec.spacing[1],
        h as f64 * spec.spacing[2],
    ];
    let brain_axes = [0.45 * extent[0], 0.45 * extent[1], 0.45 * extent[2]];

    // Smooth texture phases per channel.
    let texture_phases: Vec<[f64; 3]> = (0..CONTRASTS)
        .map(|_| {
            [
                std::f64::consts::TAU * rng.random::<f64>(),
                std::f64::consts::TAU * rng.random::<f64>(),
                std::f64::consts::TAU * rng.random::<f64>(),
            ]
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut labels = Array3::<u8>::zeros((d, w, h));
    let mut data = Array4::<f32>::zeros((CONTRASTS, d, w, h));
    for x in 0..d {
        for y in 0..w {
            for z in 0..h {
                let p = [
                    (x as f64 + 0.5) * spec.spacing[0],
                    (y as f64 + 0.5) * spec.spacing[1],
                    (z as f64 + 0.5) * spec.spacing[2],
                ];
                let mut code = LabelCode::Background;
                // Soft membership in each shell, max over tumors.
                let mut soft = [0.0f64; 3];
                for tumor in &tumors {
                    let rho = tumor.rho(p);
                    let shell = if rho <= tumor.radii[0] {
                        LabelCode::Necrotic
                    } else if rho <= tumor.radii[1] {
                        LabelCode::Enhancing
                    } else if rho <= tumor.radii[2] {
                        LabelCode::Edema
                    } else {
                        LabelCode::Background
                    };
                    code = stronger(code, shell);
                    for (s, r) in soft.iter_mut().zip(tumor.radii) {
                        *s = s.max(smooth_inside(r, rho));
                    }
                }
                labels[[x, y, z]] = code as u8;

                let b = (0..3)
                    .map(|i| ((p[i] - 0.5 * extent[i]) / brain_axes[i]).powi(2))
                    .sum::<f64>();
                let in_brain = b <= 1.0 || code != LabelCode::Background;
                if !in_brain {
                    continue;
                }
                for (c, profile) in spec.contrast_profiles.iter().enumerate() {
                    let [s_ncr, s_tc, s_wt] = soft;
                    let mut v = profile.tissue
                        + (profile.edema - profile.tissue) * s_wt
                        + (profile.enhancing - profile.edema) * s_tc
                        + (profile.necrotic - profile.enhancing) * s_ncr;
                    let ph = texture_phases[c];
                    let tex = (0.31 * p[0] + ph[0]).sin()
                        * (0.27 * p[1] + ph[1]).sin()
                        * (0.23 * p[2] + ph[2]).sin();
                    v *= 1.0 + profile.texture * tex;
                    if spec.noise_sigma > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    data[[c, x, y, z]] = (v as f32).max(FOREGROUND_FLOOR);
                }
            }
        }
    }

    let map = DisjointLabelMap {
        labels,
        spacing: spec.spacing,
    };
    for code in [LabelCode::Necrotic, LabelCode::Edema, LabelCode::Enhancing] {
        if map.count(code) == 0 {
            return Err(Error::InvalidConfig(format!(
                "phantom seed {} produced no {code:?} voxels",
                spec.seed
            )));
        }
    }
    let volume = MultiContrastVolume {
        data,
        spacing: spec.spacing,
        meta: Provenance::Phantom {
            case_index,
            spec: spec.clone(),
        },
        foreground: None,
    };
    Ok((volume, map))
}

fn stronger(a: LabelCode, b: LabelCode) -> LabelCode {
    fn rank(c: LabelCode) -> u8 {
        match c {
            LabelCode::Background => 0,
            LabelCode::Edema => 1,
            LabelCode::Enhancing => 2,
            LabelCode::Necrotic => 3,
        }
    }
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::to_regions;
    use crate::volume::Region;

    #[test]
    fn deterministic() {
        let spec = PhantomSpec::default().with_seed(7);
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn enhancing_inside_tumor_support() {
        let (_, labels) = generate_phantom(&PhantomSpec::default()).unwrap();
        let regions = to_regions(&labels).unwrap();
        let et = regions.region(Region::Enhancing);
        assert!(et.iter().any(|&v| v == 1));
        for (&e, &c) in et.iter().zip(labels.labels.iter()) {
            if e == 1 {
                assert!(c != 0);
            }
        }
    }

    #[test]
    fn whole_tumor_fraction_regression_bound() {
        for seed in 0..10 {
            let (_, labels) = generate_phantom(&PhantomSpec::default().with_seed(seed)).unwrap();
            let frac = labels.labels.iter().filter(|&&c| c != 0).count() as f64
                / labels.labels.len() as f64;
            assert!((0.005..=0.20).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn rejects_indivisible_dims() {
        let spec = PhantomSpec {
            dims: [36, 32, 32],
            levels: 4,
            ..PhantomSpec::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Divisibility { .. })));
    }

    #[test]
    fn rejects_oversized_tumor() {
        let mut spec = PhantomSpec::default();
        spec.radius_range.whole = MmRange::new(10.0, 14.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn channels_are_informative() {
        let (vol, labels) = generate_phantom(&PhantomSpec::default()).unwrap();
        // Enhancing voxels are brighter than edema on the T1Gd-like channel.
        let mean = |code: u8, c: usize| {
            let (s, n) = labels
                .labels
                .indexed_iter()
                .filter(|(_, &l)| l == code)
                .fold((0.0, 0usize), |(s, n), ((x, y, z), _)| {
                    (s + vol.data[[c, x, y, z]] as f64, n + 1)
                });
            s / n as f64
        };
        assert!(mean(3, 1) > mean(2, 1) + 0.2);
        assert!(mean(2, 3) > mean(0, 3) + 0.2);
    }

    #[test]
    fn multiple_tumors_keep_codes_valid() {
        let spec = PhantomSpec {
            tumor_count: 3,
            ..PhantomSpec::default()
        };
        let (vol, labels) = generate_phantom(&spec).unwrap();
        labels.validate().unwrap();
        assert!(vol.all_finite());
    }
}
