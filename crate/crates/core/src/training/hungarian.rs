//! Minimum-cost bipartite assignment (Kuhn–Munkres with potentials, O(n²m)).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{AimsError, Result};

/// One-to-one assignment of `min(N, M)` (query, target) pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Sorted by query index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

impl MatchResult {
    /// Target index per query.
    pub fn target_of(&self, n_queries: usize) -> Vec<Option<usize>> {
        let mut t = vec![None; n_queries];
        for &(q, g) in &self.pairs {
            t[q] = Some(g);
        }
        t
    }

    pub fn total_cost(&self, cost: &Array2<f64>) -> f64 {
        self.pairs.iter().map(|&(q, g)| cost[[q, g]]).sum()
    }
}

/// Minimum-total-cost matching between the rows (queries) and columns (targets) of `cost`.
pub fn hungarian_match(cost: &Array2<f64>) -> Result<MatchResult> {
    if let Some(((i, j), v)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(AimsError::InvalidCost(format!("entry ({i}, {j}) is {v}")));
    }
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Ok(MatchResult { pairs: vec![], unmatched: (0..n).collect() });
    }
    // The potential method needs rows ≤ columns; transpose otherwise.
    let transposed = n > m;
    let a = if transposed { cost.t().to_owned() } else { cost.clone() };
    let (rows, cols) = a.dim();
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if !used[j] {
                    let cur = a[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| p[j] != 0)
        .map(|j| if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) })
        .collect();
    pairs.sort_unstable();
    let mut matched = vec![false; n];
    for &(q, _) in &pairs {
        matched[q] = true;
    }
    let unmatched = (0..n).filter(|&q| !matched[q]).collect();
    Ok(MatchResult { pairs, unmatched })
}
