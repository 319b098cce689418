mod common;

use std::fs;
use std::path::Path;

use segrefine::dataset::phantom_cases;
use segrefine::diffusion::ConditioningVariant;
use segrefine::harness::{
    audit_leakage, crossval, make_folds, run_arm, Arm, ExperimentConfig, Report, RunManifest, ScoreTable,
    MANIFEST_FILE, SCORES_FILE,
};
use segrefine::io::write_phantom_dataset;
use segrefine::Error;

fn tiny_config(data: &Path, runs: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(data, runs);
    cfg.folds = 2;
    cfg.seed = 11;
    cfg.arms = Arm::ALL.to_vec();
    cfg.baseline.model.levels = 2;
    cfg.baseline.model.base_width = 4;
    cfg.baseline.train.epochs = 2;
    cfg.baseline.train.optimizer.lr = 1e-2;
    cfg.diffusion.model.levels = 2;
    cfg.diffusion.model.base_width = 4;
    cfg.diffusion.model.time_features = 8;
    cfg.diffusion.model.time_dim = 8;
    cfg.diffusion.model.sample_steps = 2;
    cfg.diffusion.train.epochs = 1;
    cfg.diffusion.train.optimizer.lr = 1e-2;
    cfg
}

fn scores_of(runs: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for arm in Arm::ALL {
        for fold in ["fold1", "fold2"] {
            let p = runs.join(arm.name()).join(fold).join(SCORES_FILE);
            out.push((p.display().to_string(), fs::read_to_string(p).unwrap()));
        }
    }
    out
}

#[test]
fn tiny_study_is_complete_audited_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_phantom_dataset(&data, &common::small_spec(3), 6).unwrap();

    let cfg = tiny_config(&data, &tmp.path().join("runs_a"));
    let outcome = crossval(&cfg).unwrap();
    assert_eq!(outcome.runs.len(), 2 * Arm::ALL.len());
    for run in &outcome.runs {
        for sub in ["checkpoints", "preds", "scores.csv", "config.snapshot"] {
            assert!(run.dir.join(sub).exists(), "{} lacks {sub}", run.dir.display());
        }
        assert_eq!(run.table.cases.len(), 3);
    }
    let audit = audit_leakage(&cfg.run_dir).unwrap();
    assert_eq!((audit.runs_checked, audit.cases), (10, 6));

    let report = Report::load(&[cfg.run_dir.clone()]).unwrap();
    assert_eq!(report.rows.len(), 10);
    assert_eq!(report.improvements().len(), 4);
    let md = fs::read_to_string(cfg.run_dir.join("report.md")).unwrap();
    assert!(md.contains("| fold2 | discrepancy-diff |"));

    let again = ExperimentConfig {
        run_dir: tmp.path().join("runs_b"),
        ..cfg.clone()
    };
    crossval(&again).unwrap();
    let (a, b) = (scores_of(&cfg.run_dir), scores_of(&again.run_dir));
    for ((_, x), (path, y)) in a.iter().zip(&b) {
        assert_eq!(x, y, "{path} differs between reruns");
    }
}

#[test]
fn diffusion_arm_needs_the_baseline_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), &tmp.path().join("runs"));
    let cases = phantom_cases(&common::small_spec(1), 4).unwrap();
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let folds = make_folds(&ids, 2, 0).unwrap();
    let arm = Arm::MaskDiffusion(ConditioningVariant::MaskedMri);
    assert!(matches!(
        run_arm(arm, &folds, 0, &cfg, &cases),
        Err(Error::MissingCheckpoint(_))
    ));
}

#[test]
fn audit_and_report_reject_tampered_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_phantom_dataset(&data, &common::small_spec(5), 4).unwrap();
    let mut cfg = tiny_config(&data, &tmp.path().join("runs"));
    cfg.arms = vec![Arm::Baseline];
    crossval(&cfg).unwrap();

    let run = cfg.run_dir.join("baseline/fold1");
    let scores = run.join(SCORES_FILE);
    let text = fs::read_to_string(&scores).unwrap();
    fs::write(&scores, text.replace("percentile=95", "percentile=90")).unwrap();
    assert!(matches!(
        Report::load(&[cfg.run_dir.clone()]),
        Err(Error::InconsistentConventions(_))
    ));
    fs::write(&scores, &text).unwrap();
    assert!(ScoreTable::read(&scores).is_ok());

    let manifest_path = run.join(MANIFEST_FILE);
    let mut m = RunManifest::read(&manifest_path).unwrap();
    m.train_ids.push(m.test_ids[0].clone());
    fs::write(&manifest_path, serde_json::to_vec(&m).unwrap()).unwrap();
    assert!(matches!(audit_leakage(&cfg.run_dir), Err(Error::Leakage { .. })));
}
