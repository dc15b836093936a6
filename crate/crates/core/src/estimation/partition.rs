use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{rng_from, shuffle};

/// A K-fold partition of `0..n`. Fold sizes differ by at most one and each
/// fold lists its indices in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPartition {
    n: usize,
    folds: Vec<Vec<usize>>,
}

/// Uniformly random balanced partition of `0..n` into `k` folds.
pub fn make_partition(n: usize, k: usize, seed: u64) -> Result<FoldPartition> {
    if k < 2 {
        return Err(invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(invalid(format!("{k} folds exceed {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut rng_from(seed), &mut order);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldPartition { n, folds })
}

impl FoldPartition {
    /// The trivial partition with every row in one fold (no cross-fitting).
    pub fn single(n: usize) -> Self {
        Self { n, folds: vec![(0..n).collect()] }
    }

    pub fn from_folds(n: usize, folds: Vec<Vec<usize>>) -> Result<Self> {
        let p = Self { n, folds };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn fold(&self, k: usize) -> &[usize] {
        &self.folds[k]
    }

    /// Sorted indices outside fold `k`.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        let mut inside = vec![false; self.n];
        for &i in &self.folds[k] {
            inside[i] = true;
        }
        (0..self.n).filter(|&i| !inside[i]).collect()
    }

    /// Fold id of every row.
    pub fn fold_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (k, fold) in self.folds.iter().enumerate() {
            for &i in fold {
                out[i] = k;
            }
        }
        out
    }

    /// Disjoint, covering, balanced to within one.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n];
        for fold in &self.folds {
            for &i in fold {
                if i >= self.n {
                    return Err(Error::Format(format!("index {i} out of range for n = {}", self.n)));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Format(format!("index {i} appears in more than one fold")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("index {i} is in no fold")));
        }
        let sizes = self.folds.iter().map(Vec::len);
        let (lo, hi) = (sizes.clone().min().unwrap_or(0), sizes.max().unwrap_or(0));
        if hi - lo > 1 {
            return Err(Error::Format(format!("fold sizes range from {lo} to {hi}")));
        }
        Ok(())
    }
}
