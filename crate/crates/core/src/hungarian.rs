//! Minimum-cost one-to-one assignment (Kuhn-Munkres with potentials).
//!
//! Rectangular problems are padded to square with a caller-chosen cost;
//! assignments to padding rows or columns are reported as unassigned.

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Solves the assignment problem on `costs` padded to square with `pad`.
///
/// Returns, for each row, the assigned column (`None` when the row was
/// assigned to padding). The padded square assignment has minimum total
/// cost.
pub fn solve(costs: &Matrix, pad: f64) -> Vec<Option<usize>> {
    let n = costs.rows.max(costs.cols);
    if n == 0 {
        return vec![None; costs.rows];
    }
    let cost = |r: usize, c: usize| {
        if r < costs.rows && c < costs.cols {
            costs.get(r, c)
        } else {
            pad
        }
    };

    // 1-based shortest augmenting path formulation; index 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_v[j] {
                    min_v[j] = reduced;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; costs.rows];
    for (j, &r) in col_owner.iter().enumerate().skip(1) {
        if r >= 1 && r - 1 < costs.rows && j - 1 < costs.cols {
            assignment[r - 1] = Some(j - 1);
        }
    }
    assignment
}
