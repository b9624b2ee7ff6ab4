//! Minimum-cost bipartite assignment (Hungarian method, shortest augmenting
//! paths with potentials) with support for forbidden pairs.
//!
//! Rectangular inputs are padded to a square matrix. Padding and forbidden
//! entries share one large finite sentinel, so the solver first maximises the
//! number of allowed pairs and then minimises their total cost.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    cost: Vec<f64>,
}

impl CostMatrix {
    /// Row-major costs. Entries must be finite or `+inf` (forbidden).
    pub fn new(rows: usize, cols: usize, cost: Vec<f64>) -> Result<Self> {
        if cost.len() != rows * cols {
            return Err(Error::Domain(format!(
                "cost matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                cost.len()
            )));
        }
        if let Some(bad) = cost.iter().find(|c| c.is_nan() || **c == f64::NEG_INFINITY) {
            return Err(Error::Domain(format!("invalid cost entry {bad}")));
        }
        Ok(CostMatrix { rows, cols, cost })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let cost = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        CostMatrix::new(rows, cols, cost)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.cost[r * self.cols + c]
    }

    pub fn is_forbidden(&self, r: usize, c: usize) -> bool {
        !self.get(r, c).is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Matching {
    pub fn total_cost(&self, c: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, k)| c.get(r, k)).sum()
    }

    /// Column matched to each row, if any.
    pub fn col_for_row(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for &(r, c) in &self.pairs {
            out[r] = Some(c);
        }
        out
    }
}

/// Minimum total cost over all maximum-cardinality matchings that avoid
/// forbidden entries.
pub fn solve_min_cost(c: &CostMatrix) -> Matching {
    let (rows, cols) = (c.rows, c.cols);
    if rows == 0 || cols == 0 {
        return Matching {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        };
    }
    let finite = c.cost.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        // Everything is forbidden.
        return Matching {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        };
    }
    let range = hi - lo;
    let sentinel = (range + 1.0) * (rows + cols) as f64;
    let n = rows.max(cols);
    let square = |r: usize, k: usize| -> f64 {
        if r < rows && k < cols {
            let v = c.get(r, k);
            if v.is_finite() {
                return v - lo;
            }
        }
        sentinel
    };
    let assignment = hungarian_square(n, square);

    let mut pairs = Vec::new();
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for (r, &k) in assignment.iter().enumerate() {
        if r < rows && k < cols && c.get(r, k).is_finite() {
            pairs.push((r, k));
            row_used[r] = true;
            col_used[k] = true;
        }
    }
    Matching {
        pairs,
        unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cols).filter(|&k| !col_used[k]).collect(),
    }
}

/// As [`solve_min_cost`], with every entry above `reject_above` forbidden.
pub fn solve_with_threshold(c: &CostMatrix, reject_above: f64) -> Matching {
    let gated = CostMatrix {
        rows: c.rows,
        cols: c.cols,
        cost: c
            .cost
            .iter()
            .map(|&v| if v > reject_above { f64::INFINITY } else { v })
            .collect(),
    };
    solve_min_cost(&gated)
}

/// O(n^3) assignment on a dense square matrix; returns the column of each row.
fn hungarian_square(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based arrays, index 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if row_of_col[j] > 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    col_of_row
}
