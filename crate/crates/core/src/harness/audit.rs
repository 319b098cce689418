use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::folds::FoldAssignment;
use crate::harness::run::{RunManifest, FOLDS_FILE, MANIFEST_FILE};

/// Outcome of a passing audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub runs_checked: usize,
    pub cases: usize,
}

fn leak(case: &str) -> Error {
    Error::Leakage { case: case.to_string() }
}

/// Checks every run under `run_root` against the recorded fold assignment:
/// training ids (and the ids of any baseline a run consumed) never include
/// a test id, each run tests exactly its fold, and for every arm the test
/// folds partition the dataset.
pub fn audit_leakage(run_root: &Path) -> Result<AuditReport> {
    let folds_path = run_root.join(FOLDS_FILE);
    let bytes = fs::read(&folds_path).map_err(|e| Error::io(&folds_path, e))?;
    let assignment: FoldAssignment = serde_json::from_slice(&bytes)?;

    let mut per_arm: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut runs = 0;
    let mut arm_dirs: Vec<_> = fs::read_dir(run_root)
        .map_err(|e| Error::io(run_root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    arm_dirs.sort();
    for arm_dir in arm_dirs {
        let mut fold_dirs: Vec<_> = fs::read_dir(&arm_dir)
            .map_err(|e| Error::io(&arm_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        fold_dirs.sort();
        for dir in fold_dirs {
            let m = RunManifest::read(&dir.join(MANIFEST_FILE))?;
            let test: BTreeSet<&String> = m.test_ids.iter().collect();
            let mut seen_train = m.train_ids.iter().chain(m.baseline_train_ids.iter().flatten());
            if let Some(id) = seen_train.find(|id| test.contains(id)) {
                return Err(leak(id));
            }
            if m.test_ids != assignment.test_ids(m.fold) {
                return Err(Error::Malformed {
                    path: dir.join(MANIFEST_FILE),
                    reason: format!("test ids differ from fold {} of the assignment", m.fold + 1),
                });
            }
            if let Some(id) = m.train_ids.iter().find(|id| assignment.fold_of(id) == Some(m.fold)) {
                return Err(leak(id));
            }
            per_arm.entry(m.arm.name()).or_default().extend(m.test_ids);
            runs += 1;
        }
    }
    if runs == 0 {
        return Err(Error::Empty("run set"));
    }
    let all: Vec<&String> = assignment.folds.keys().collect();
    for (arm, mut ids) in per_arm {
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) || ids.iter().collect::<Vec<_>>() != all {
            return Err(Error::Malformed {
                path: run_root.join(arm),
                reason: "test folds do not partition the dataset".into(),
            });
        }
    }
    Ok(AuditReport {
        runs_checked: runs,
        cases: assignment.folds.len(),
    })
}
