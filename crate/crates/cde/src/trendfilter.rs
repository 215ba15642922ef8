//! Graph trend-filtering penalty operators over bin lattices.
//!
//! The base (order-0) operator is the oriented incidence matrix of the
//! lattice whose vertices are the flat bin indices and whose edges join
//! axis-aligned nearest neighbors. Higher orders alternate products with
//! the base and its transpose: `D^(1) = D^T D` is the graph Laplacian,
//! `D^(2) = D D^(1)`, `D^(3) = D^T D^(2)` and so on. Every order has one
//! column per bin, so each operator applies directly to a logit vector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothing width of the optional differentiable penalty surrogate.
pub const SMOOTH_EPS: f64 = 1e-6;

/// Triplet sparse matrix. Entries are sorted by (row, col) and deduplicated;
/// exact zeros are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, triplets: Vec<(usize, usize, f64)>) -> Self {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in triplets {
            debug_assert!(r < rows && c < cols);
            *merged.entry((r, c)).or_insert(0.0) += v;
        }
        let entries = merged
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        SparseMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, triplets)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        // index other's entries by row
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); other.rows];
        for &(r, c, v) in &other.entries {
            by_row[r].push((c, v));
        }
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, a) in &self.entries {
            for &(l, b) in &by_row[j] {
                *acc.entry((i, l)).or_insert(0.0) += a * b;
            }
        }
        let entries = acc
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        Ok(SparseMatrix {
            rows: self.rows,
            cols: other.cols,
            entries,
        })
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        Ok(y)
    }

    /// `y = A^T x`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::Shape(format!(
                "vector of length {} against {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut y = vec![0.0; self.cols];
        for &(r, c, v) in &self.entries {
            y[c] += v * x[r];
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            d[r][c] = v;
        }
        d
    }
}

/// Oriented incidence matrix of the axis-aligned nearest-neighbor lattice
/// over flat row-major bin indices. One row per edge; the row for edge
/// (u, v) with u < v has -1 at u and +1 at v. Edges are enumerated axis by
/// axis in flat vertex order.
pub fn grid_incidence(dims: &[usize]) -> Result<SparseMatrix> {
    if dims.is_empty() {
        return Err(Error::Config("lattice needs at least one dimension".into()));
    }
    if dims.contains(&0) {
        return Err(Error::Config(
            "lattice dimensions must all be at least 1".into(),
        ));
    }
    let p: usize = dims.iter().product();
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let mut triplets = Vec::new();
    let mut row = 0usize;
    for (a, (&da, &stride)) in dims.iter().zip(&strides).enumerate() {
        let _ = a;
        for u in 0..p {
            let coord_a = (u / stride) % da;
            if coord_a + 1 < da {
                let v = u + stride;
                triplets.push((row, u, -1.0));
                triplets.push((row, v, 1.0));
                row += 1;
            }
        }
    }
    Ok(SparseMatrix::from_triplets(row, p, triplets))
}

/// k-th order trend-filtering operator with the lattice it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyMatrix {
    pub matrix: SparseMatrix,
    pub order: usize,
    pub graph_dims: Vec<usize>,
}

impl PenaltyMatrix {
    /// Build the order-`k` operator for a bin lattice of shape `dims`.
    pub fn build(dims: &[usize], k: usize) -> Result<Self> {
        let base = grid_incidence(dims)?;
        let matrix = penalty_matrix(&base, k)?;
        Ok(PenaltyMatrix {
            matrix,
            order: k,
            graph_dims: dims.to_vec(),
        })
    }

    /// Number of logits the operator applies to.
    pub fn signal_len(&self) -> usize {
        self.matrix.cols
    }
}

/// Alternating products of the incidence matrix: order 0 is the base
/// itself, odd orders left-multiply by the transpose, even orders by the
/// base. Every order keeps one column per vertex.
pub fn penalty_matrix(base: &SparseMatrix, k: usize) -> Result<SparseMatrix> {
    let mut m = base.clone();
    for j in 1..=k {
        m = if j % 2 == 1 {
            base.transpose().matmul(&m)?
        } else {
            base.matmul(&m)?
        };
    }
    Ok(m)
}

/// `||D psi||_1`.
pub fn penalty_value(delta: &PenaltyMatrix, psi: &[f64]) -> Result<f64> {
    let r = delta.matrix.matvec(psi)?;
    Ok(r.iter().map(|v| v.abs()).sum())
}

/// Subgradient `D^T sign(D psi)` of the L1 penalty, with sign(0) = 0.
pub fn penalty_subgradient(delta: &PenaltyMatrix, psi: &[f64]) -> Result<Vec<f64>> {
    let r = delta.matrix.matvec(psi)?;
    let s: Vec<f64> = r.iter().map(|&v| signum0(v)).collect();
    delta.matrix.transpose_matvec(&s)
}

/// Smoothed surrogate `sum_i sqrt((D psi)_i^2 + eps^2)` for optimizers that
/// need a differentiable penalty. Not used by the default training path.
pub fn penalty_value_smoothed(delta: &PenaltyMatrix, psi: &[f64]) -> Result<f64> {
    let r = delta.matrix.matvec(psi)?;
    Ok(r.iter()
        .map(|&v| (v * v + SMOOTH_EPS * SMOOTH_EPS).sqrt())
        .sum())
}

/// Gradient of the smoothed surrogate.
pub fn penalty_gradient_smoothed(delta: &PenaltyMatrix, psi: &[f64]) -> Result<Vec<f64>> {
    let r = delta.matrix.matvec(psi)?;
    let s: Vec<f64> = r
        .iter()
        .map(|&v| v / (v * v + SMOOTH_EPS * SMOOTH_EPS).sqrt())
        .collect();
    delta.matrix.transpose_matvec(&s)
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
