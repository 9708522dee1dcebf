use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Optimal injective matching of the smaller side into the larger one.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Exact rectangular linear assignment (shortest augmenting paths with
/// potentials, O(r²c) for r ≤ c). Ties go to the lowest column index met
/// during each augmentation, which makes the result deterministic.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Result<Assignment> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Argument("assignment cost matrix is empty".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Argument("assignment costs must be finite".into()));
    }
    if rows <= cols {
        let col_of = solve(rows, cols, |i, j| cost[(i, j)]);
        let total = col_of.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        Ok(Assignment {
            pairs: col_of.into_iter().enumerate().collect(),
            cost: total,
        })
    } else {
        let row_of = solve(cols, rows, |j, i| cost[(i, j)]);
        let total = row_of.iter().enumerate().map(|(j, &i)| cost[(i, j)]).sum();
        let mut pairs: Vec<(usize, usize)> = row_of.into_iter().enumerate().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        Ok(Assignment { pairs, cost: total })
    }
}

/// Returns the column matched to every row; requires `r <= c`.
fn solve(r: usize, c: usize, a: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based potentials with a virtual column 0
    let mut u = vec![0.0; r + 1];
    let mut v = vec![0.0; c + 1];
    let mut p = vec![0usize; c + 1]; // p[j]: row (1-based) matched to column j
    let mut way = vec![0usize; c + 1];
    for i in 1..=r {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; c + 1];
        let mut used = vec![false; c + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=c {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=c {
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
    let mut col_of = vec![0usize; r];
    for j in 1..=c {
        if p[j] != 0 {
            col_of[p[j] - 1] = j - 1;
        }
    }
    col_of
}
