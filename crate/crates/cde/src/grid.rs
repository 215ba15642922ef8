//! Evenly spaced discretization grids over continuous target spaces.
//!
//! A grid converts continuous targets to flat bin indices (row-major over
//! dimensions, last dimension contiguous) and back to bin centers. The same
//! flattening convention is shared by the partition tree and the penalty
//! lattice so that bin `j` means the same cell everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evenly divided axis of the target space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl GridAxis {
    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.bins as f64
    }

    /// Bin edges, `bins + 1` of them, strictly increasing.
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins)
            .map(|i| self.min + (self.max - self.min) * i as f64 / self.bins as f64)
            .collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|i| self.min + (self.max - self.min) * (i as f64 + 0.5) / self.bins as f64)
            .collect()
    }

    /// Bin index for a value. Values exactly on an interior edge belong to
    /// the bin on the right; the max edge belongs to the last bin;
    /// out-of-range values clamp to the boundary bins.
    pub fn index_of(&self, value: f64) -> usize {
        let edges = self.edges();
        // count interior edges <= value
        let mut idx = 0usize;
        for e in &edges[1..self.bins] {
            if *e <= value {
                idx += 1;
            }
        }
        idx
    }
}

/// Evenly spaced binning of a (possibly multivariate) target space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationGrid {
    pub axes: Vec<GridAxis>,
}

impl DiscretizationGrid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        for (i, ax) in axes.iter().enumerate() {
            if !ax.min.is_finite() || !ax.max.is_finite() {
                return Err(Error::Config(format!("grid axis {i}: non-finite range")));
            }
            if ax.min >= ax.max {
                return Err(Error::Config(format!(
                    "grid axis {i}: min {} must be below max {}",
                    ax.min, ax.max
                )));
            }
            if ax.bins == 0 {
                return Err(Error::Config(format!("grid axis {i}: zero bins")));
            }
        }
        Ok(DiscretizationGrid { axes })
    }

    /// Grid spanning the per-column ranges of `targets` (rows are samples).
    pub fn fit(targets: &ndarray::Array2<f64>, bins: &[usize]) -> Result<Self> {
        let d = targets.ncols();
        if bins.len() != d {
            return Err(Error::Config(format!(
                "bin spec has {} entries for {} target dimensions",
                bins.len(),
                d
            )));
        }
        if targets.nrows() == 0 {
            return Err(Error::Data("cannot fit a grid to zero samples".into()));
        }
        let mut axes = Vec::with_capacity(d);
        for (j, &b) in bins.iter().enumerate() {
            let col = targets.column(j);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in col.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo == hi {
                // degenerate column: widen by a token amount so the grid is valid
                lo -= 0.5;
                hi += 0.5;
            }
            axes.push(GridAxis {
                min: lo,
                max: hi,
                bins: b,
            });
        }
        DiscretizationGrid::new(axes)
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    /// Per-dimension bin counts.
    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.bins).collect()
    }

    /// Total number of bins (product over dimensions).
    pub fn total_bins(&self) -> usize {
        self.axes.iter().map(|a| a.bins).product()
    }

    /// Row-major strides matching `dims()`.
    pub fn strides(&self) -> Vec<usize> {
        let dims = self.dims();
        let mut s = vec![1usize; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * dims[i + 1];
        }
        s
    }

    /// Flat row-major bin index of a target point.
    pub fn flat_index(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.ndim() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, grid has {} axes",
                point.len(),
                self.ndim()
            )));
        }
        for (j, v) in point.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite target in dimension {j}")));
            }
        }
        let strides = self.strides();
        let mut flat = 0usize;
        for (j, (&v, ax)) in point.iter().zip(&self.axes).enumerate() {
            flat += ax.index_of(v) * strides[j];
        }
        Ok(flat)
    }

    /// Multi-index of a flat bin index.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let strides = self.strides();
        let mut rest = flat;
        let mut idx = Vec::with_capacity(self.ndim());
        for s in strides {
            idx.push(rest / s);
            rest %= s;
        }
        idx
    }

    /// Center coordinates of a flat bin index.
    pub fn bin_center(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, ax)| ax.min + (ax.max - ax.min) * (i as f64 + 0.5) / ax.bins as f64)
            .collect()
    }

    /// Lower and upper bounds of a flat bin, per dimension.
    pub fn bin_bounds(&self, flat: usize) -> Vec<(f64, f64)> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, ax)| {
                let lo = ax.min + (ax.max - ax.min) * i as f64 / ax.bins as f64;
                let hi = ax.min + (ax.max - ax.min) * (i + 1) as f64 / ax.bins as f64;
                (lo, hi)
            })
            .collect()
    }

    /// True if `point` lies inside the grid's range in every dimension.
    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(&self.axes)
            .all(|(&v, ax)| v >= ax.min && v <= ax.max)
    }
}
