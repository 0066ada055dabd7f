//! Kuhn-Munkres minimum-cost perfect matching, O(n^3) shortest augmenting
//! paths with row/column potentials.

use crate::error::{Error, Result};

/// A perfect matching of rows to columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(row, col)` pairs, one per row in ascending row order.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Minimum-cost perfect matching on a square matrix given as rows.
pub fn munkres(cost: &[Vec<f64>]) -> Result<Matching> {
    let n = cost.len();
    for (r, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotSquare { rows: n, cols: row.len() });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCost { row: r, col: c });
        }
    }
    let assignment = solve(n, |r, c| cost[r][c]);
    let pairs: Vec<(usize, usize)> = assignment.into_iter().enumerate().collect();
    let total = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Matching { pairs, total })
}

/// Returns the column matched to each row. Rows are inserted in ascending
/// order and columns are scanned in ascending order with strict comparisons,
/// so ties resolve to the lowest indices.
pub(crate) fn solve(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based with index 0 as the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        col_row[0] = row;
        let mut j0 = 0;
        min_slack.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != 0, "no augmenting column found");
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_col = vec![0; n];
    for j in 1..=n {
        row_col[col_row[j] - 1] = j - 1;
    }
    row_col
}
