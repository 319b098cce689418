//! Cross-validation study: fold assignment, per-arm training and
//! evaluation, score files, reports and the leakage audit.

mod audit;
mod config;
mod folds;
mod report;
mod run;
mod scores;

pub use crate::loss::compound_loss;
pub use audit::{audit_leakage, AuditReport};
pub use config::{Arm, BaselineSection, DiffusionSection, ExperimentConfig, SCHEMA_VERSION};
pub use folds::{make_folds, FoldAssignment};
pub use report::{relative_improvement, ArmSummary, FoldRow, Improvement, Report, ReportFormat};
pub use run::{
    crossval, derive_seed, fold_name, run_arm, run_path, ArmRun, CrossvalOutcome, RunManifest, BASELINE_CHECKPOINT,
    CHECKPOINT_DIR, DELTA_FILE, DENOISER_CHECKPOINT, FOLDS_FILE, MANIFEST_FILE, PREDS_DIR, SNAPSHOT_FILE,
};
pub use scores::{ScoreTable, ScoredCase, SCORES_FILE};
