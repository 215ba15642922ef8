//! Mixture density network head: the network emits, per example, mixture
//! weight logits, component means, and packed lower-triangular Cholesky
//! factors of each component covariance. Diagonal factor entries pass
//! through softplus plus a small floor so covariances stay positive
//! definite; off-diagonal entries are unconstrained.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::DiscretizationGrid;
use crate::partition::logistic;

use super::{log_sum_exp, softmax, softplus, DensityEstimate};

/// Floor added to softplus-transformed diagonal Cholesky entries.
pub const DIAG_FLOOR: f64 = 1e-4;
/// Standardized distance beyond which quadrature treats the Gaussian
/// factor as zero (exp(-0.5 * 81) < 3e-18).
const PRUNE_Z: f64 = 9.0;
/// Midpoint-rule subdivisions per bin and axis for 2-d integration.
const SUBDIVISIONS: usize = 32;

/// Raw network output width for `m` components over `d` target dimensions:
/// one weight logit, `d` means, and `d (d + 1) / 2` Cholesky entries each.
pub fn mdn_output_dim(m: usize, d: usize) -> usize {
    m * (1 + d + d * (d + 1) / 2)
}

fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Index of lower-triangular entry (i, j), j <= i, packed row-major.
fn tri_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// One example's mixture parameters after the output transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Per component: packed lower-triangular Cholesky factor, diagonal
    /// already softplus-floored.
    chols: Vec<Vec<f64>>,
    dim: usize,
}

impl GmmParams {
    /// Parse one raw output row laid out as
    /// `[weight logits | means | Cholesky entries]`, component-major
    /// within each section.
    pub fn from_raw(raw: &[f64], m: usize, d: usize) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::Config(
                "mixture needs at least one component and dimension".into(),
            ));
        }
        let expect = mdn_output_dim(m, d);
        if raw.len() != expect {
            return Err(Error::Shape(format!(
                "raw mixture row has {} entries, expected {expect} for {m} components over {d} dims",
                raw.len()
            )));
        }
        let weights = softmax(&raw[..m]);
        let tri = tri_len(d);
        let mean_base = m;
        let chol_base = m + m * d;
        let mut means = Vec::with_capacity(m);
        let mut chols = Vec::with_capacity(m);
        for c in 0..m {
            means.push(raw[mean_base + c * d..mean_base + (c + 1) * d].to_vec());
            let mut l = raw[chol_base + c * tri..chol_base + (c + 1) * tri].to_vec();
            for i in 0..d {
                let di = tri_index(i, i);
                l[di] = softplus(l[di]) + DIAG_FLOOR;
            }
            chols.push(l);
        }
        Ok(GmmParams {
            weights,
            means,
            chols,
            dim: d,
        })
    }

    pub fn m_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c]
    }

    pub fn chol_entry(&self, c: usize, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        self.chols[c][tri_index(i, j)]
    }

    /// Weighted average of the component means.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (c, w) in self.weights.iter().enumerate() {
            for (j, &mu) in self.means[c].iter().enumerate() {
                out[j] += w * mu;
            }
        }
        out
    }

    /// Log density of the mixture at a point.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let scores: Vec<f64> = (0..self.m_components())
            .map(|c| self.weights[c].ln() + self.component_log_density(c, y))
            .collect();
        log_sum_exp(&scores)
    }

    /// Log density of one Gaussian component at a point.
    pub fn component_log_density(&self, c: usize, y: &[f64]) -> f64 {
        let d = self.dim;
        let u: Vec<f64> = y.iter().zip(&self.means[c]).map(|(a, b)| a - b).collect();
        let z = solve_lower(&self.chols[c], d, &u);
        let logdet: f64 = (0..d).map(|i| self.chols[c][tri_index(i, i)].ln()).sum();
        let z2: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - logdet - 0.5 * z2
    }
}

/// Forward substitution: solve L z = u for lower-triangular packed L.
fn solve_lower(chol: &[f64], d: usize, u: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut s = u[i];
        for j in 0..i {
            s -= chol[tri_index(i, j)] * z[j];
        }
        z[i] = s / chol[tri_index(i, i)];
    }
    z
}

/// Back substitution: solve L^T t = z.
fn solve_lower_transpose(chol: &[f64], d: usize, z: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = z[i];
        for j in i + 1..d {
            s -= chol[tri_index(j, i)] * t[j];
        }
        t[i] = s / chol[tri_index(i, i)];
    }
    t
}

/// Mean mixture negative log likelihood of continuous targets and its
/// gradient with respect to the raw network outputs (weight logits, means,
/// and Cholesky entries, with the softplus chain applied on diagonals).
#[allow(clippy::needless_range_loop)] // index math spans several packed buffers
pub fn mdn_loss(
    net_out: &Array2<f64>,
    targets: &Array2<f64>,
    m: usize,
) -> Result<(f64, Array2<f64>)> {
    let n = net_out.nrows();
    let d = targets.ncols();
    if targets.nrows() != n {
        return Err(Error::Shape(format!(
            "{} target rows for {n} output rows",
            targets.nrows()
        )));
    }
    let expect = mdn_output_dim(m, d);
    if net_out.ncols() != expect {
        return Err(Error::Shape(format!(
            "{} output columns, expected {expect} for {m} components over {d} dims",
            net_out.ncols()
        )));
    }
    let tri = tri_len(d);
    let mean_base = m;
    let chol_base = m + m * d;
    let scale = 1.0 / n as f64;

    let mut loss = 0.0;
    let mut upstream = Array2::zeros(net_out.raw_dim());
    for i in 0..n {
        let raw = net_out.row(i);
        let raw = raw.as_slice().unwrap();
        let y = targets.row(i);
        let y = y.as_slice().unwrap();
        let params = GmmParams::from_raw(raw, m, d)?;

        // per-component joint scores and solves
        let mut scores = vec![0.0; m];
        let mut zs = Vec::with_capacity(m);
        for c in 0..m {
            scores[c] = params.weights[c].ln() + params.component_log_density(c, y);
            let u: Vec<f64> = y.iter().zip(&params.means[c]).map(|(a, b)| a - b).collect();
            zs.push(solve_lower(&params.chols[c], d, &u));
        }
        let lse = log_sum_exp(&scores);
        loss += -lse * scale;
        let resp: Vec<f64> = scores.iter().map(|&s| (s - lse).exp()).collect();

        for c in 0..m {
            // weight logits: softmax weight minus responsibility
            upstream[[i, c]] = (params.weights[c] - resp[c]) * scale;

            let t = solve_lower_transpose(&params.chols[c], d, &zs[c]);
            for j in 0..d {
                upstream[[i, mean_base + c * d + j]] = -resp[c] * t[j] * scale;
            }
            for r in 0..d {
                for s in 0..=r {
                    let idx = chol_base + c * tri + tri_index(r, s);
                    let mut g = -t[r] * zs[c][s];
                    if r == s {
                        g += 1.0 / params.chols[c][tri_index(r, r)];
                        // softplus chain on the raw diagonal entry
                        g *= logistic(raw[idx]);
                    }
                    upstream[[i, idx]] = resp[c] * g * scale;
                }
            }
        }
    }
    Ok((loss, upstream))
}

/// Standard normal CDF.
fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Discretize a mixture over a grid. One dimension integrates each bin
/// exactly through CDF differences; two dimensions use midpoint quadrature
/// with `SUBDIVISIONS^2` subcells per bin. Mass falling outside the grid is
/// redistributed proportionally by renormalizing over the bins.
pub fn mdn_discrete_density(
    params: &GmmParams,
    grid: &DiscretizationGrid,
) -> Result<DensityEstimate> {
    if grid.ndim() != params.dim() {
        return Err(Error::Shape(format!(
            "{}-dim mixture over a {}-dim grid",
            params.dim(),
            grid.ndim()
        )));
    }
    match params.dim() {
        1 => {
            let edges = grid.axes[0].edges();
            let bins = grid.axes[0].bins;
            let mut mass = vec![0.0; bins];
            for c in 0..params.m_components() {
                let w = params.weights()[c];
                let mu = params.mean(c)[0];
                let sigma = params.chol_entry(c, 0, 0);
                let cdf: Vec<f64> = edges
                    .iter()
                    .map(|&e| normal_cdf((e - mu) / sigma))
                    .collect();
                for b in 0..bins {
                    mass[b] += w * (cdf[b + 1] - cdf[b]).max(0.0);
                }
            }
            DensityEstimate::from_unnormalized(mass, grid.clone())
        }
        2 => {
            let mass = quadrature_2d(params, grid);
            DensityEstimate::from_unnormalized(mass, grid.clone())
        }
        d => Err(Error::Config(format!(
            "density discretization supports 1 or 2 target dimensions, got {d}"
        ))),
    }
}

/// Midpoint quadrature of the mixture density over every grid cell. The
/// Cholesky parametrization factorizes the component density into a factor
/// in the first coordinate and a conditional factor in the second, so the
/// double sum runs one axis at a time instead of over full subcell tuples.
#[allow(clippy::needless_range_loop)] // windowed index ranges over shared buffers
fn quadrature_2d(params: &GmmParams, grid: &DiscretizationGrid) -> Vec<f64> {
    let (ax0, ax1) = (&grid.axes[0], &grid.axes[1]);
    let (b0, b1) = (ax0.bins, ax1.bins);
    let sub0 = ax0.width() / SUBDIVISIONS as f64;
    let sub1 = ax1.width() / SUBDIVISIONS as f64;
    let cell_area = sub0 * sub1;
    let n0 = b0 * SUBDIVISIONS;
    let n1 = b1 * SUBDIVISIONS;
    let us: Vec<f64> = (0..n0).map(|i| ax0.min + (i as f64 + 0.5) * sub0).collect();
    let vs: Vec<f64> = (0..n1).map(|j| ax1.min + (j as f64 + 0.5) * sub1).collect();

    let mut mass = vec![0.0; b0 * b1];
    let mut rowsum = vec![0.0; b1];
    for c in 0..params.m_components() {
        let w = params.weights()[c];
        let (mu0, mu1) = (params.mean(c)[0], params.mean(c)[1]);
        let l00 = params.chol_entry(c, 0, 0);
        let l10 = params.chol_entry(c, 1, 0);
        let l11 = params.chol_entry(c, 1, 1);
        let norm = w * cell_area / (2.0 * std::f64::consts::PI * l00 * l11);

        // first-axis window where |z0| <= PRUNE_Z
        let u_lo = us.partition_point(|&u| u < mu0 - PRUNE_Z * l00);
        let u_hi = us.partition_point(|&u| u <= mu0 + PRUNE_Z * l00);
        for iu in u_lo..u_hi {
            let z0 = (us[iu] - mu0) / l00;
            let f0 = (-0.5 * z0 * z0).exp();
            // conditional center of the second coordinate given z0
            let center = mu1 + l10 * z0;
            let v_lo = vs.partition_point(|&v| v < center - PRUNE_Z * l11);
            let v_hi = vs.partition_point(|&v| v <= center + PRUNE_Z * l11);
            if v_lo == v_hi {
                continue;
            }
            rowsum.iter_mut().for_each(|r| *r = 0.0);
            for jv in v_lo..v_hi {
                let z1 = (vs[jv] - center) / l11;
                rowsum[jv / SUBDIVISIONS] += (-0.5 * z1 * z1).exp();
            }
            let bin0 = iu / SUBDIVISIONS;
            let base = bin0 * b1;
            for (bin1, &r) in rowsum.iter().enumerate() {
                if r > 0.0 {
                    mass[base + bin1] += norm * f0 * r;
                }
            }
        }
    }
    mass
}
