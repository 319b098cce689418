use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fold index (0-based) of every case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.folds.get(id).copied()
    }

    /// Sorted ids held out in `fold`.
    pub fn test_ids(&self, fold: usize) -> Vec<String> {
        self.folds.iter().filter(|(_, &f)| f == fold).map(|(id, _)| id.clone()).collect()
    }

    /// Sorted ids used for training when `fold` is held out.
    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.folds.iter().filter(|(_, &f)| f != fold).map(|(id, _)| id.clone()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the sorted ids with a seeded generator and deals them out
/// round-robin.
pub fn make_folds(case_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    let unique: BTreeSet<&String> = case_ids.iter().collect();
    if unique.len() != case_ids.len() {
        return Err(Error::InvalidConfig("case ids must be unique".into()));
    }
    if k == 0 || k > case_ids.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot split {} cases into {k} folds",
            case_ids.len()
        )));
    }
    let mut ids: Vec<&String> = unique.into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = ids.into_iter().enumerate().map(|(i, id)| (id.clone(), i % k)).collect();
    Ok(FoldAssignment { k, seed, folds })
}
