//! Patient-wise k-fold splitting.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::recording::EegWindow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
}

/// Shuffles the distinct neonate ids with `seed` and deals them round-robin
/// into `k` test groups, so group sizes differ by at most one.
pub fn patient_folds(neonate_ids: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let unique: BTreeSet<&String> = neonate_ids.iter().collect();
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    if k > ids.len() {
        return Err(Error::invalid(format!("k = {k} exceeds {} neonates", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut groups: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, id) in ids.iter().enumerate() {
        groups[i % k].push(id.clone());
    }
    let folds = groups
        .iter()
        .map(|test| {
            let test_set: HashSet<&String> = test.iter().collect();
            let mut test = test.clone();
            test.sort();
            let mut train: Vec<String> = ids.iter().filter(|id| !test_set.contains(id)).cloned().collect();
            train.sort();
            Fold { train, test }
        })
        .collect();
    let split = FoldSplit { folds };
    split.validate()?;
    Ok(split)
}

impl FoldSplit {
    /// Checks train/test disjointness and that each neonate tests exactly once.
    pub fn validate(&self) -> Result<()> {
        let mut tested = HashSet::new();
        for f in &self.folds {
            f.check_disjoint()?;
            for id in &f.test {
                if !tested.insert(id) {
                    return Err(Error::invalid(format!("neonate `{id}` tested in more than one fold")));
                }
            }
        }
        Ok(())
    }
}

impl Fold {
    pub fn check_disjoint(&self) -> Result<()> {
        let test: HashSet<&String> = self.test.iter().collect();
        match self.train.iter().find(|id| test.contains(id)) {
            Some(id) => Err(Error::Leakage(id.clone())),
            None => Ok(()),
        }
    }

    /// Partitions windows into (train, test) by neonate id. Windows of
    /// neonates in neither list are dropped.
    pub fn split_windows(&self, windows: &[EegWindow]) -> Result<(Vec<EegWindow>, Vec<EegWindow>)> {
        self.check_disjoint()?;
        let train: HashSet<&str> = self.train.iter().map(String::as_str).collect();
        let test: HashSet<&str> = self.test.iter().map(String::as_str).collect();
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for w in windows {
            if train.contains(w.neonate_id.as_str()) {
                tr.push(w.clone());
            } else if test.contains(w.neonate_id.as_str()) {
                te.push(w.clone());
            }
        }
        Ok((tr, te))
    }
}

/// Fails if any training window's neonate is in `test_ids`.
pub fn assert_no_leakage(train: &[EegWindow], test_ids: &[String]) -> Result<()> {
    let test: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    match train.iter().find(|w| test.contains(w.neonate_id.as_str())) {
        Some(w) => Err(Error::Leakage(w.neonate_id.clone())),
        None => Ok(()),
    }
}
