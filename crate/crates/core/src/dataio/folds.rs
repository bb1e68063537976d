use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Stratified k-fold assignment. `assignments[i]` is the test fold of
/// exemplar `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    /// `(train, test)` index lists for `fold`, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (self.train_indices(fold), self.test_indices(fold))
    }
}

/// Shuffles each class with a seeded stream, then deals its members round
/// robin across folds. The dealing offset carries over from class to class so
/// overall fold sizes differ by at most one.
pub fn plan_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("fold count {k} < 2")));
    }
    if labels.is_empty() {
        return Err(Error::EmptyExemplars);
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    for (class, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < k {
            return Err(Error::Stratification {
                class,
                count: m.len(),
                k,
            });
        }
    }

    let mut rng = rng::stream(seed, rng::tag("folds"));
    let mut assignments = vec![0; labels.len()];
    let mut offset = 0;
    for m in members.iter_mut() {
        m.shuffle(&mut rng);
        for (pos, &i) in m.iter().enumerate() {
            assignments[i] = (offset + pos) % k;
        }
        offset = (offset + m.len()) % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}
