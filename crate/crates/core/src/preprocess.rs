//! Intensity normalization: per-channel Z-score over the foreground,
//! followed by a min-max rescale of the foreground to `[0, 1]`.
//!
//! Foreground is the set of nonzero voxels of each channel. Background
//! voxels stay exactly zero and the union foreground mask is stored on the
//! returned volume so they remain identifiable after rescaling.

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::volume::MultiContrastVolume;

/// Z-scores every channel over its nonzero voxels. Background stays 0.
pub fn zscore_foreground(vol: &MultiContrastVolume) -> Result<MultiContrastVolume> {
    let mut out = vol.clone();
    let foreground = vol.nonzero_mask();
    for (c, mut channel) in out.data.axis_iter_mut(Axis(0)).enumerate() {
        let values: Vec<f64> = channel
            .iter()
            .filter(|v| **v != 0.0)
            .map(|&v| v as f64)
            .collect();
        if values.is_empty() {
            return Err(Error::EmptyForeground { channel: c });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::ConstantChannel { channel: c });
        }
        channel.mapv_inplace(|v| {
            if v == 0.0 {
                0.0
            } else {
                ((v as f64 - mean) / std) as f32
            }
        });
    }
    out.foreground = Some(foreground);
    Ok(out)
}

/// Z-score then rescale each channel's foreground to `[0, 1]`.
pub fn znorm_rescale(vol: &MultiContrastVolume) -> Result<MultiContrastVolume> {
    let raw_fg: Vec<Vec<bool>> = vol
        .data
        .axis_iter(Axis(0))
        .map(|ch| ch.iter().map(|v| *v != 0.0).collect())
        .collect();
    let mut out = zscore_foreground(vol)?;
    for (c, mut channel) in out.data.axis_iter_mut(Axis(0)).enumerate() {
        let fg = &raw_fg[c];
        let (lo, hi) = channel
            .iter()
            .zip(fg)
            .filter(|(_, f)| **f)
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (v, _)| {
                (lo.min(*v), hi.max(*v))
            });
        let span = (hi - lo) as f64;
        if !(span > 0.0) {
            return Err(Error::ConstantChannel { channel: c });
        }
        for (v, f) in channel.iter_mut().zip(fg) {
            *v = if *f {
                ((*v - lo) as f64 / span) as f32
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};
    use crate::volume::Provenance;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;

    fn volume_with(channel0: &[f32]) -> MultiContrastVolume {
        let n = channel0.len();
        let mut data = Array4::<f32>::zeros((4, 1, 1, n));
        for c in 0..4 {
            for (i, v) in channel0.iter().enumerate() {
                data[[c, 0, 0, i]] = if *v != 0.0 { v + c as f32 } else { 0.0 };
            }
        }
        MultiContrastVolume::new(data, [1.0; 3], Provenance::Derived { note: "test".into() })
            .unwrap()
    }

    #[test]
    fn hand_computed_three_values() {
        let vol = volume_with(&[1.0, 2.0, 3.0, 0.0]);
        let z = zscore_foreground(&vol).unwrap();
        let k = 1.224_744_871_391_589;
        assert_abs_diff_eq!(z.data[[0, 0, 0, 0]] as f64, -k, epsilon = 1e-6);
        assert_abs_diff_eq!(z.data[[0, 0, 0, 1]] as f64, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(z.data[[0, 0, 0, 2]] as f64, k, epsilon = 1e-6);
        let r = znorm_rescale(&vol).unwrap();
        let got: Vec<f32> = (0..4).map(|i| r.data[[0, 0, 0, i]]).collect();
        assert_eq!(got, vec![0.0, 0.5, 1.0, 0.0]);
        let fg = r.foreground.as_ref().unwrap();
        assert!(fg[[0, 0, 0]] && !fg[[0, 0, 3]]);
    }

    #[test]
    fn constant_channel_rejected() {
        let vol = volume_with(&[2.0, 2.0, 2.0]);
        assert!(matches!(
            znorm_rescale(&vol),
            Err(Error::ConstantChannel { channel: 0 })
        ));
    }

    #[test]
    fn phantom_foreground_moments() {
        let (vol, _) = generate_phantom(&PhantomSpec::default()).unwrap();
        let z = zscore_foreground(&vol).unwrap();
        for c in 0..4 {
            let vals: Vec<f64> = vol
                .data
                .index_axis(Axis(0), c)
                .iter()
                .zip(z.data.index_axis(Axis(0), c).iter())
                .filter(|(raw, _)| **raw != 0.0)
                .map(|(_, v)| *v as f64)
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-4, "std {std}");
        }
        let r = znorm_rescale(&vol).unwrap();
        assert!(r.all_finite());
        for c in 0..4 {
            let ch = r.data.index_axis(Axis(0), c);
            let max = ch.iter().cloned().fold(f32::MIN, f32::max);
            assert_eq!(max, 1.0);
            assert!(ch.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn standardized_input_still_rescaled() {
        let vol = volume_with(&[-1.224_744_9, 0.5, 1.224_744_9]);
        let r = znorm_rescale(&vol).unwrap();
        assert_eq!(r.data[[0, 0, 0, 0]], 0.0);
        assert_eq!(r.data[[0, 0, 0, 2]], 1.0);
    }
}
