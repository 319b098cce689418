//! JSON checkpoints for trained models.
//!
//! A checkpoint stores the model configuration, what it was trained on, and
//! every parameter tensor by name. Loading rebuilds the architecture from
//! the configuration and then overwrites its parameters, so a checkpoint
//! whose tensors do not match the configured layout is rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{build_denoiser, ConditioningVariant, DenoiserConfig, DenoiserModel, TargetMode};
use crate::error::{Error, Result};
use crate::nn::StoredParam;
use crate::segmenter::{build_segmenter, SegmenterConfig, SegmenterModel, TrainingFingerprint};

const SEGMENTER_KIND: &str = "segmenter";
const DENOISER_KIND: &str = "denoiser";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct SegmenterFile {
    kind: String,
    version: u32,
    config: SegmenterConfig,
    fingerprint: TrainingFingerprint,
    params: Vec<StoredParam>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DenoiserFile {
    kind: String,
    version: u32,
    variant: ConditioningVariant,
    target: TargetMode,
    config: DenoiserConfig,
    fingerprint: TrainingFingerprint,
    /// Denoising network and time embedding.
    du_params: Vec<StoredParam>,
    /// Conditioning encoder.
    xi_params: Vec<StoredParam>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, serde_json::to_vec(value)?).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct Header {
    kind: String,
    version: u32,
}

/// Reads a checkpoint after checking its kind and version.
fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, expected: &str) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingCheckpoint(path.to_owned()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&bytes)?;
    if header.kind != expected || header.version != VERSION {
        return Err(Error::Malformed {
            path: path.to_owned(),
            reason: format!(
                "expected {expected} checkpoint v{VERSION}, found {} v{}",
                header.kind, header.version
            ),
        });
    }
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn save_segmenter(path: &Path, model: &SegmenterModel) -> Result<()> {
    write_json(
        path,
        &SegmenterFile {
            kind: SEGMENTER_KIND.into(),
            version: VERSION,
            config: model.config,
            fingerprint: model.fingerprint.clone(),
            params: model.params.to_stored(),
        },
    )
}

pub fn load_segmenter(path: &Path) -> Result<SegmenterModel> {
    let file: SegmenterFile = read_json(path, SEGMENTER_KIND)?;
    let mut model = build_segmenter(&file.config, file.fingerprint.seed)?;
    model.params.load_stored(&file.params).map_err(|reason| Error::Malformed {
        path: path.to_owned(),
        reason,
    })?;
    model.fingerprint = file.fingerprint;
    Ok(model)
}

pub fn save_denoiser(path: &Path, model: &DenoiserModel) -> Result<()> {
    let (xi_params, du_params): (Vec<_>, Vec<_>) =
        model.params.to_stored().into_iter().partition(|p| p.name.starts_with("xi."));
    write_json(
        path,
        &DenoiserFile {
            kind: DENOISER_KIND.into(),
            version: VERSION,
            variant: model.config.conditioning.variant,
            target: model.config.target,
            config: model.config,
            fingerprint: model.fingerprint.clone(),
            du_params,
            xi_params,
        },
    )
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserModel> {
    let file: DenoiserFile = read_json(path, DENOISER_KIND)?;
    if file.variant != file.config.conditioning.variant || file.target != file.config.target {
        return Err(Error::Malformed {
            path: path.to_owned(),
            reason: "variant/target disagree with the stored config".into(),
        });
    }
    let mut model = build_denoiser(&file.config, file.fingerprint.seed)?;
    // Restore the original parameter order: du/time tensors and xi tensors
    // are interleaved by name in the store, so match by name.
    let mut all = file.du_params;
    all.extend(file.xi_params);
    let order: Vec<StoredParam> = model
        .params
        .iter()
        .map(|p| {
            all.iter()
                .find(|s| s.name == p.name)
                .cloned()
                .ok_or_else(|| Error::Malformed {
                    path: path.to_owned(),
                    reason: format!("missing parameter {}", p.name),
                })
        })
        .collect::<Result<_>>()?;
    if order.len() != all.len() {
        return Err(Error::Malformed {
            path: path.to_owned(),
            reason: "unexpected extra parameters".into(),
        });
    }
    model.params.load_stored(&order).map_err(|reason| Error::Malformed {
        path: path.to_owned(),
        reason,
    })?;
    model.fingerprint = file.fingerprint;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ConditioningOptions;

    #[test]
    fn segmenter_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SegmenterConfig {
            base_width: 2,
            ..Default::default()
        };
        let mut model = build_segmenter(&cfg, 4).unwrap();
        model.params.iter_mut().next().unwrap().data[0] = 0.123_456_79;
        model.fingerprint.data_checksum = "abc".into();
        let path = dir.path().join("seg.json");
        save_segmenter(&path, &model).unwrap();
        let back = load_segmenter(&path).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.fingerprint, model.fingerprint);
        assert!(matches!(load_denoiser(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn denoiser_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DenoiserConfig {
            levels: 2,
            base_width: 2,
            time_features: 4,
            time_dim: 4,
            conditioning: ConditioningOptions {
                variant: ConditioningVariant::MaskedMri,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut model = build_denoiser(&cfg, 8).unwrap();
        for p in model.params.iter_mut() {
            p.data.iter_mut().for_each(|v| *v += 0.5);
        }
        let path = dir.path().join("sub/den.json");
        save_denoiser(&path, &model).unwrap();
        let back = load_denoiser(&path).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.config, model.config);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_segmenter(Path::new("/nonexistent/seg.json")),
            Err(Error::MissingCheckpoint(_))
        ));
    }
}
