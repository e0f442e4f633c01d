use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, rng_from};

/// Stratified fold id per row: each class's rows are shuffled, the class
/// lists are concatenated in class order, and position `i` goes to fold
/// `i mod k`. Fold sizes then differ by at most one, as do per-fold counts
/// of every class.
pub fn stratified_fold_ids(labels: &[usize], k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::validation(format!("need at least 2 folds, got {k}")));
    }
    let c = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if !rows.is_empty() && rows.len() < k {
            return Err(Error::validation(format!(
                "class {class} has {} rows, fewer than the {k} folds",
                rows.len()
            )));
        }
    }
    let mut ids = vec![0; labels.len()];
    let mut pos = 0;
    for rows in &mut by_class {
        rows.shuffle(rng);
        for &r in rows.iter() {
            ids[r] = pos % k;
            pos += 1;
        }
    }
    Ok(ids)
}

/// Repeated stratified k-fold assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    /// `assignments[repeat][row]` is the row's held-out fold in that repeat.
    pub assignments: Vec<Vec<usize>>,
}

pub fn make_cv_plan(labels: &[usize], k: usize, repeats: usize, seed: u64) -> Result<CvPlan> {
    if repeats == 0 {
        return Err(Error::validation("need at least one repeat"));
    }
    let assignments = (0..repeats)
        .map(|r| stratified_fold_ids(labels, k, &mut rng_from(seed, &[r as u64])))
        .collect::<Result<_>>()?;
    Ok(CvPlan {
        k,
        repeats,
        seed,
        assignments,
    })
}

impl CvPlan {
    pub fn n_rows(&self) -> usize {
        self.assignments.first().map_or(0, Vec::len)
    }

    pub fn n_cells(&self) -> usize {
        self.k * self.repeats
    }

    /// (repeat, fold) pairs in evaluation order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.repeats).flat_map(move |r| (0..self.k).map(move |f| (r, f)))
    }

    pub fn test_rows(&self, repeat: usize, fold: usize) -> Vec<usize> {
        let a = &self.assignments[repeat];
        (0..a.len()).filter(|&i| a[i] == fold).collect()
    }

    pub fn train_rows(&self, repeat: usize, fold: usize) -> Vec<usize> {
        let a = &self.assignments[repeat];
        (0..a.len()).filter(|&i| a[i] != fold).collect()
    }

    /// Seed for everything random inside one cell.
    pub fn cell_seed(&self, repeat: usize, fold: usize) -> u64 {
        derive_seed(self.seed, &[repeat as u64, fold as u64])
    }
}
