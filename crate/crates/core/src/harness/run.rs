use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_segmenter, save_denoiser, save_segmenter};
use crate::dataset::Case;
use crate::diffusion::{build_denoiser, prepare_cases, sample, train_diffusion, DiffusionTrainConfig, TargetMode};
use crate::discrepancy::{apply_correction, binarize_discrepancy};
use crate::error::{Error, Result};
use crate::harness::config::{Arm, ExperimentConfig};
use crate::harness::folds::FoldAssignment;
use crate::harness::scores::{ScoreTable, ScoredCase, SCORES_FILE};
use crate::io::{write_discrepancy, write_mask, write_probs, MASK_FILE, PROBS_FILE};
use crate::metrics::{evaluate_case_with, MetricConventions};
use crate::segmenter::{binarize, build_segmenter, predict, train_segmenter, TrainConfig, TrainingFingerprint};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const PREDS_DIR: &str = "preds";
pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FOLDS_FILE: &str = "folds.json";
pub const BASELINE_CHECKPOINT: &str = "baseline.json";
pub const DENOISER_CHECKPOINT: &str = "denoiser.json";
pub const DELTA_FILE: &str = "delta.nii";

/// Seed for one job, derived from the study seed so that each (tag, fold)
/// pair is independent of the order jobs run in.
pub fn derive_seed(base: u64, tag: &str, fold: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update((fold as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Directory name of fold `fold` (0-based).
pub fn fold_name(fold: usize) -> String {
    format!("fold{}", fold + 1)
}

pub fn run_path(run_root: &Path, arm: Arm, fold: usize) -> PathBuf {
    run_root.join(arm.name()).join(fold_name(fold))
}

/// What a run did, written next to its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub arm: Arm,
    pub fold: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Training ids of the baseline a diffusion arm consumed.
    pub baseline_train_ids: Option<Vec<String>>,
    pub baseline_fingerprint: TrainingFingerprint,
    pub model_fingerprint: TrainingFingerprint,
    pub loss_trace: Vec<f64>,
    /// Voxels where a predicted mask breaks ET ⊆ TC ⊆ WT, per test case.
    pub nesting_violations: BTreeMap<String, usize>,
    pub conventions: MetricConventions,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// A finished arm on one fold.
#[derive(Debug, Clone)]
pub struct ArmRun {
    pub dir: PathBuf,
    pub table: ScoreTable,
    pub manifest: RunManifest,
}

fn select<'a>(cases: &'a [Case], ids: &[String]) -> Result<Vec<&'a Case>> {
    ids.iter()
        .map(|id| {
            cases
                .iter()
                .find(|c| &c.id == id)
                .ok_or_else(|| Error::InvalidConfig(format!("case {id} is not in the dataset")))
        })
        .collect()
}

fn check_disjoint(train: &[String], test: &[String]) -> Result<()> {
    let test: BTreeSet<&String> = test.iter().collect();
    match train.iter().find(|id| test.contains(id)) {
        Some(id) => Err(Error::Leakage { case: id.clone() }),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

/// Trains `arm` on the out-of-fold cases and evaluates it on fold `fold`.
///
/// Diffusion arms read the baseline checkpoint of the same fold, so the
/// baseline arm must have run first.
pub fn run_arm(
    arm: Arm,
    assignment: &FoldAssignment,
    fold: usize,
    cfg: &ExperimentConfig,
    cases: &[Case],
) -> Result<ArmRun> {
    if fold >= assignment.k {
        return Err(Error::InvalidConfig(format!("fold {fold} outside 0..{}", assignment.k)));
    }
    let train_ids = assignment.train_ids(fold);
    let test_ids = assignment.test_ids(fold);
    check_disjoint(&train_ids, &test_ids)?;
    let train = select(cases, &train_ids)?;
    let test = select(cases, &test_ids)?;

    let dir = run_path(&cfg.run_dir, arm, fold);
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    let preds_dir = dir.join(PREDS_DIR);
    create_dir(&ckpt_dir)?;
    create_dir(&preds_dir)?;
    fs::write(dir.join(SNAPSHOT_FILE), cfg.to_toml()?).map_err(|e| Error::io(&dir, e))?;

    let seed = derive_seed(cfg.seed, &arm.name(), fold);
    let baseline_dir = run_path(&cfg.run_dir, Arm::Baseline, fold);
    let baseline_path = baseline_dir.join(CHECKPOINT_DIR).join(BASELINE_CHECKPOINT);
    let train_owned: Vec<Case> = train.iter().map(|&c| c.clone()).collect();

    let mut nesting = BTreeMap::new();
    let mut scored = Vec::with_capacity(test.len());
    let mut evaluate = |case: &Case, mask: &crate::volume::RegionMask| -> Result<()> {
        write_mask(&preds_dir.join(&case.id).join(MASK_FILE), mask)?;
        nesting.insert(case.id.clone(), mask.nesting_violations());
        scored.push(ScoredCase {
            id: case.id.clone(),
            scores: evaluate_case_with(mask, &case.regions, case.image.spacing, &cfg.metrics)?,
        });
        Ok(())
    };

    let (baseline_fp, model_fp, loss_trace, baseline_train_ids) = match arm.target() {
        None => {
            let model = build_segmenter(&cfg.baseline.model, seed)?;
            let hyper = TrainConfig {
                seed: derive_seed(seed, "train", fold),
                ..cfg.baseline.train
            };
            let out = train_segmenter(model, &train_owned, &hyper)?;
            save_segmenter(&baseline_path, &out.model)?;
            for case in &test {
                let probs = predict(&out.model, &case.image)?;
                write_probs(&preds_dir.join(&case.id).join(PROBS_FILE), &probs)?;
                evaluate(case, &binarize(&probs, cfg.threshold)?)?;
            }
            let fp = out.model.fingerprint.clone();
            (fp.clone(), fp, out.loss_trace, None)
        }
        Some(target) => {
            let baseline = load_segmenter(&baseline_path)?;
            let manifest = RunManifest::read(&baseline_dir.join(MANIFEST_FILE))?;
            check_disjoint(&manifest.train_ids, &test_ids)?;
            let dcfg = cfg.denoiser_config(arm).expect("diffusion arm");
            let upreds = train
                .iter()
                .map(|c| predict(&baseline, &c.image))
                .collect::<Result<Vec<_>>>()?;
            let dcases = prepare_cases(&dcfg, &train_owned, &upreds)?;
            let hyper = DiffusionTrainConfig {
                seed: derive_seed(seed, "train", fold),
                ..cfg.diffusion.train
            };
            let out = train_diffusion(build_denoiser(&dcfg, seed)?, &dcases, &hyper)?;
            save_denoiser(&ckpt_dir.join(DENOISER_CHECKPOINT), &out.model)?;
            for case in &test {
                let upred = predict(&baseline, &case.image)?;
                let sample_seed = derive_seed(seed, &format!("sample:{}", case.id), fold);
                let soft = sample(&out.model, &case.image, &upred, dcfg.sample_steps, sample_seed)?;
                let case_dir = preds_dir.join(&case.id);
                write_probs(&case_dir.join(PROBS_FILE), &soft)?;
                let mask = match target {
                    TargetMode::DirectMask => binarize(&soft, cfg.threshold)?,
                    TargetMode::Discrepancy => {
                        let delta = binarize_discrepancy(&soft, cfg.threshold)?;
                        write_discrepancy(&case_dir.join(DELTA_FILE), &delta)?;
                        apply_correction(&binarize(&upred, cfg.threshold)?, &delta)?
                    }
                };
                evaluate(case, &mask)?;
            }
            (
                baseline.fingerprint.clone(),
                out.model.fingerprint.clone(),
                out.loss_trace,
                Some(manifest.train_ids),
            )
        }
    };

    let table = ScoreTable {
        cases: scored,
        conventions: cfg.metrics,
    };
    table.write(&dir.join(SCORES_FILE))?;
    let manifest = RunManifest {
        arm,
        fold,
        seed,
        train_ids,
        test_ids,
        baseline_train_ids,
        baseline_fingerprint: baseline_fp,
        model_fingerprint: model_fp,
        loss_trace,
        nesting_violations: nesting,
        conventions: cfg.metrics,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    log::info!("{arm} {}: {} test cases scored", fold_name(fold), table.cases.len());
    Ok(ArmRun { dir, table, manifest })
}

/// Result of a full cross-validation study.
#[derive(Debug, Clone)]
pub struct CrossvalOutcome {
    pub assignment: FoldAssignment,
    pub runs: Vec<ArmRun>,
}

/// Runs every configured arm on every fold, baseline first within each
/// fold, then audits the runs for leakage and writes `report.md` and
/// `report.csv` into the run directory.
pub fn crossval(cfg: &ExperimentConfig) -> Result<CrossvalOutcome> {
    cfg.validate()?;
    let cases = crate::io::load_dataset(&cfg.data_dir)?;
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let assignment = crate::harness::make_folds(&ids, cfg.folds, cfg.seed)?;
    create_dir(&cfg.run_dir)?;
    write_json(&cfg.run_dir.join(FOLDS_FILE), &assignment)?;
    fs::write(cfg.run_dir.join(SNAPSHOT_FILE), cfg.to_toml()?).map_err(|e| Error::io(&cfg.run_dir, e))?;
    let mut runs = Vec::new();
    for fold in 0..cfg.folds {
        for arm in cfg.ordered_arms() {
            runs.push(run_arm(arm, &assignment, fold, cfg, &cases)?);
        }
    }
    crate::harness::audit_leakage(&cfg.run_dir)?;
    let report = crate::harness::Report::load(std::slice::from_ref(&cfg.run_dir))?;
    let md = cfg.run_dir.join("report.md");
    fs::write(&md, report.to_markdown()).map_err(|e| Error::io(&md, e))?;
    let csv = cfg.run_dir.join("report.csv");
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(CrossvalOutcome { assignment, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(derive_seed(1, "baseline", 0), derive_seed(1, "baseline", 0));
        assert_ne!(derive_seed(1, "baseline", 0), derive_seed(1, "baseline", 1));
        assert_ne!(derive_seed(1, "baseline", 0), derive_seed(2, "baseline", 0));
        assert_ne!(derive_seed(1, "baseline", 0), derive_seed(1, "discrepancy-diff", 0));
    }

    #[test]
    fn leakage_is_detected() {
        let a = vec!["x".to_string(), "y".to_string()];
        assert!(check_disjoint(&a, &["z".to_string()]).is_ok());
        assert!(matches!(check_disjoint(&a, &["y".to_string()]), Err(Error::Leakage { .. })));
    }
}
