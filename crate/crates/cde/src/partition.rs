//! Recursive dyadic partitions of a binned target space.
//!
//! A `PartitionTree` halves the flat bin lattice one axis at a time until
//! every cell holds exactly one bin. Internal nodes are numbered in level
//! order (root = 0, children of `i` are `2i+1` and `2i+2`), so the node with
//! binary path `b_0 .. b_{l-1}` has id `(2^l - 1) + value(b_0..b_{l-1})`.
//! The left child of a node is the lower half of the split axis.
//!
//! Terminal-bin probabilities are products of per-node splitting
//! probabilities down the root-to-leaf path, and conversely any positive
//! density induces empirical splitting probabilities; the two directions
//! are exact inverses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound used when clamping model-produced splitting probabilities
/// away from {0, 1} before products and logs.
pub const SPLIT_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Left,
    Right,
}

/// Dyadic decomposition of a bin lattice with power-of-two per-dimension
/// counts. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    dims: Vec<usize>,
    depth: usize,
    /// Axis halved at each level, root level first.
    level_axis: Vec<usize>,
    /// Per flat bin index, the root-to-leaf decisions (node id, branch).
    leaf_paths: Vec<Vec<(usize, Branch)>>,
    /// leaf code (path bits as a binary number) -> flat bin index.
    code_to_bin: Vec<usize>,
}

impl PartitionTree {
    /// Build the tree for per-dimension bin counts `dims`. Every count must
    /// be a power of two and at least 2.
    pub fn build(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config(
                "partition needs at least one dimension".into(),
            ));
        }
        for (i, &d) in dims.iter().enumerate() {
            if d < 2 || !d.is_power_of_two() {
                return Err(Error::Config(format!(
                    "dimension {i} has {d} bins; bin counts must be powers of two >= 2"
                )));
            }
        }
        let caps: Vec<usize> = dims.iter().map(|d| d.trailing_zeros() as usize).collect();
        let depth: usize = caps.iter().sum();
        let nd = dims.len();

        // round-robin over axes, skipping exhausted ones
        let mut remaining = caps;
        let mut axis = 0usize;
        let mut level_axis = Vec::with_capacity(depth);
        for _ in 0..depth {
            while remaining[axis] == 0 {
                axis = (axis + 1) % nd;
            }
            level_axis.push(axis);
            remaining[axis] -= 1;
            axis = (axis + 1) % nd;
        }

        let p: usize = dims.iter().product();
        let strides = row_major_strides(dims);
        let mut leaf_paths = Vec::with_capacity(p);
        let mut code_to_bin = vec![usize::MAX; p];
        for bin in 0..p {
            let coord: Vec<usize> = strides
                .iter()
                .zip(dims)
                .scan(bin, |rest, (&s, _)| {
                    let q = *rest / s;
                    *rest %= s;
                    Some(q)
                })
                .collect();
            let mut lo = vec![0usize; nd];
            let mut hi = dims.to_vec();
            let mut path = Vec::with_capacity(depth);
            let mut code = 0usize;
            for (level, &a) in level_axis.iter().enumerate() {
                let mid = (lo[a] + hi[a]) / 2;
                let node = (1usize << level) - 1 + code;
                if coord[a] < mid {
                    path.push((node, Branch::Left));
                    hi[a] = mid;
                    code <<= 1;
                } else {
                    path.push((node, Branch::Right));
                    lo[a] = mid;
                    code = (code << 1) | 1;
                }
            }
            code_to_bin[code] = bin;
            leaf_paths.push(path);
        }

        Ok(PartitionTree {
            dims: dims.to_vec(),
            depth,
            level_axis,
            leaf_paths,
            code_to_bin,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// log2 of the leaf count.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of terminal bins.
    pub fn leaf_count(&self) -> usize {
        self.leaf_paths.len()
    }

    /// Number of internal nodes (one splitting probability each).
    pub fn node_count(&self) -> usize {
        self.leaf_paths.len() - 1
    }

    pub fn level_axis(&self) -> &[usize] {
        &self.level_axis
    }

    /// Root-to-leaf decisions for a flat bin index.
    pub fn leaf_path(&self, bin: usize) -> Result<&[(usize, Branch)]> {
        self.leaf_paths
            .get(bin)
            .map(|p| p.as_slice())
            .ok_or_else(|| {
                Error::Config(format!(
                    "bin index {bin} out of range for {} leaves",
                    self.leaf_count()
                ))
            })
    }

    /// Flat bin index reached by following `code`'s bits from the root
    /// (most significant bit first).
    pub fn bin_for_code(&self, code: usize) -> usize {
        self.code_to_bin[code]
    }

    /// Flat bin indices covered by the internal node `(level, code)`.
    pub fn node_bins(&self, level: usize, code: usize) -> Vec<usize> {
        let shift = self.depth - level;
        (0..self.leaf_count())
            .filter(|&leaf_code| leaf_code >> shift == code)
            .map(|leaf_code| self.code_to_bin[leaf_code])
            .collect()
    }

    /// Terminal-bin probabilities induced by per-node splitting
    /// probabilities: each leaf gets the product of `w` on left branches and
    /// `1 - w` on right branches along its path. Sums to 1.
    pub fn terminal_probabilities(&self, splits: &SplitProbabilities) -> Result<Vec<f64>> {
        if splits.values.len() != self.node_count() {
            return Err(Error::Shape(format!(
                "{} split probabilities for {} internal nodes",
                splits.values.len(),
                self.node_count()
            )));
        }
        let mut probs = vec![0.0; self.leaf_count()];
        for (bin, path) in self.leaf_paths.iter().enumerate() {
            let mut p = 1.0;
            for &(node, branch) in path {
                let w = splits.values[node];
                p *= match branch {
                    Branch::Left => w,
                    Branch::Right => 1.0 - w,
                };
            }
            probs[bin] = p;
        }
        Ok(probs)
    }

    /// Empirical splitting probabilities of a density over the bins:
    /// `w = mass(left child) / mass(parent)` at every internal node. Nodes
    /// with zero parent mass get 0.5. Exact inverse of
    /// `terminal_probabilities` for positive densities.
    pub fn splits_from_density(&self, density: &[f64]) -> Result<SplitProbabilities> {
        if density.len() != self.leaf_count() {
            return Err(Error::Shape(format!(
                "density has {} bins, tree has {} leaves",
                density.len(),
                self.leaf_count()
            )));
        }
        // masses over the complete tree, leaves last
        let total_nodes = 2 * self.leaf_count() - 1;
        let mut mass = vec![0.0f64; total_nodes];
        let leaf_base = self.leaf_count() - 1;
        for code in 0..self.leaf_count() {
            mass[leaf_base + code] = density[self.code_to_bin[code]];
        }
        for i in (0..leaf_base).rev() {
            mass[i] = mass[2 * i + 1] + mass[2 * i + 2];
        }
        let values = (0..self.node_count())
            .map(|i| {
                if mass[i] > 0.0 {
                    mass[2 * i + 1] / mass[i]
                } else {
                    0.5
                }
            })
            .collect();
        Ok(SplitProbabilities { values })
    }
}

fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// One splitting probability per internal node, level order. Entries are
/// strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProbabilities {
    values: Vec<f64>,
}

impl SplitProbabilities {
    /// Wrap values that are already strictly inside (0, 1).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &w) in values.iter().enumerate() {
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::Config(format!(
                    "split probability {i} is {w}; must lie strictly in (0, 1)"
                )));
            }
        }
        Ok(SplitProbabilities { values })
    }

    /// Clamp arbitrary values into [SPLIT_CLAMP, 1 - SPLIT_CLAMP].
    pub fn clamped(values: Vec<f64>) -> Self {
        let values = values
            .into_iter()
            .map(|w| w.clamp(SPLIT_CLAMP, 1.0 - SPLIT_CLAMP))
            .collect();
        SplitProbabilities { values }
    }

    /// Logistic transform of raw logits, clamped away from {0, 1}.
    pub fn from_logits(logits: &[f64]) -> Self {
        SplitProbabilities::clamped(logits.iter().map(|&r| logistic(r)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn logistic(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn rejects_bad_dims() {
        let err = PartitionTree::build(&[3]).unwrap_err().to_string();
        assert!(err.contains("dimension 0"), "{err}");
        let err = PartitionTree::build(&[4, 6]).unwrap_err().to_string();
        assert!(err.contains("dimension 1"), "{err}");
        assert!(PartitionTree::build(&[]).is_err());
        assert!(PartitionTree::build(&[4, 0]).is_err());
        assert!(PartitionTree::build(&[1]).is_err());
    }

    #[test]
    fn smallest_tree() {
        let t = PartitionTree::build(&[2]).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.leaf_path(0).unwrap(), &[(0, Branch::Left)]);
        assert_eq!(t.leaf_path(1).unwrap(), &[(0, Branch::Right)]);
    }

    #[test]
    fn four_bins_is_the_level_two_partition_of_the_unit_interval() {
        // leaves in order are the quarters of the bin range, i.e. with a
        // unit-interval grid: [0,.25], (.25,.5], (.5,.75], (.75,1]
        let t = PartitionTree::build(&[4]).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.leaf_count(), 4);
        // level-1 cells split the interval in half
        assert_eq!(t.node_bins(1, 0), vec![0, 1]);
        assert_eq!(t.node_bins(1, 1), vec![2, 3]);
        // leftmost leaf takes all left branches; node "0" has id 1
        assert_eq!(
            t.leaf_path(0).unwrap(),
            &[(0, Branch::Left), (1, Branch::Left)]
        );
        // rightmost leaf takes all right branches; node "1" has id 2
        assert_eq!(
            t.leaf_path(3).unwrap(),
            &[(0, Branch::Right), (2, Branch::Right)]
        );
    }

    #[test]
    fn two_d_axes_alternate_and_partition_exhaustively() {
        let t = PartitionTree::build(&[4, 4]).unwrap();
        assert_eq!(t.leaf_count(), 16);
        assert_eq!(t.depth(), 4);
        assert_eq!(t.level_axis(), &[0, 1, 0, 1]);
        // at every level the node bin sets are a disjoint cover of all 16 bins
        for level in 0..=t.depth() {
            let mut seen = vec![0usize; 16];
            for code in 0..(1usize << level) {
                for b in t.node_bins(level, code) {
                    seen[b] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "level {level}: {seen:?}");
        }
    }

    #[test]
    fn uneven_dims_cycle_skips_exhausted_axes() {
        let t = PartitionTree::build(&[2, 8]).unwrap();
        assert_eq!(t.level_axis(), &[0, 1, 1, 1]);
        assert_eq!(t.leaf_count(), 16);
    }

    #[test]
    fn two_d_leaf_path_matches_exhaustive_search() {
        let t = PartitionTree::build(&[4, 4]).unwrap();
        // bin (row 2, col 1) -> flat 9
        let bin = 2 * 4 + 1;
        let path = t.leaf_path(bin).unwrap();
        assert_eq!(path.len(), 4);
        // brute force: follow every possible 4-bit path and find the one
        // whose surviving bin set is exactly {bin}
        let mut found = None;
        for code in 0..16usize {
            let mut lo = [0usize; 2];
            let mut hi = [4usize; 2];
            for (level, &a) in t.level_axis().iter().enumerate() {
                let bit = (code >> (3 - level)) & 1;
                let mid = (lo[a] + hi[a]) / 2;
                if bit == 0 {
                    hi[a] = mid;
                } else {
                    lo[a] = mid;
                }
            }
            if hi[0] - lo[0] == 1 && hi[1] - lo[1] == 1 && lo[0] * 4 + lo[1] == bin {
                found = Some(code);
            }
        }
        let code = found.expect("exactly one path reaches the bin");
        for (level, &(node, branch)) in path.iter().enumerate() {
            let bit = (code >> (3 - level)) & 1;
            assert_eq!(branch == Branch::Right, bit == 1);
            assert_eq!(node, (1 << level) - 1 + (code >> (4 - level)));
        }
    }

    #[test]
    fn out_of_range_bin_is_an_error() {
        let t = PartitionTree::build(&[4]).unwrap();
        assert!(t.leaf_path(4).is_err());
    }

    #[test]
    fn uniform_splits_give_uniform_density() {
        let t = PartitionTree::build(&[4]).unwrap();
        let s = SplitProbabilities::new(vec![0.5; 3]).unwrap();
        let probs = t.terminal_probabilities(&s).unwrap();
        assert_eq!(probs, vec![0.25; 4]);
    }

    #[test]
    fn single_split_puts_w_on_the_left() {
        let t = PartitionTree::build(&[2]).unwrap();
        let s = SplitProbabilities::new(vec![0.7]).unwrap();
        let probs = t.terminal_probabilities(&s).unwrap();
        assert!((probs[0] - 0.7).abs() < 1e-15);
        assert!((probs[1] - 0.3).abs() < 1e-15);
    }

    /// Independent oracle: recursively distribute unit mass down the tree.
    fn mass_splitting_oracle(t: &PartitionTree, s: &SplitProbabilities) -> Vec<f64> {
        let mut probs = vec![0.0; t.leaf_count()];
        fn recurse(
            t: &PartitionTree,
            s: &SplitProbabilities,
            level: usize,
            code: usize,
            mass: f64,
            out: &mut [f64],
        ) {
            if level == t.depth() {
                out[t.bin_for_code(code)] = mass;
                return;
            }
            let node = (1usize << level) - 1 + code;
            let w = s.values()[node];
            recurse(t, s, level + 1, code << 1, mass * w, out);
            recurse(t, s, level + 1, (code << 1) | 1, mass * (1.0 - w), out);
        }
        recurse(t, s, 0, 0, 1.0, &mut probs);
        probs
    }

    #[test]
    fn random_splits_match_mass_splitting_oracle() {
        let t = PartitionTree::build(&[8]).unwrap();
        let mut rng = rng_from_seed(42);
        let values: Vec<f64> = (0..t.node_count())
            .map(|_| rng.gen_range(0.05..0.95))
            .collect();
        let s = SplitProbabilities::new(values).unwrap();
        let got = t.terminal_probabilities(&s).unwrap();
        let want = mass_splitting_oracle(&t, &s);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-15, "{g} vs {w}");
        }
        let sum: f64 = got.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn round_trip_recovers_density() {
        let mut rng = rng_from_seed(7);
        for dims in [vec![4], vec![8], vec![4, 4], vec![2, 8], vec![16, 16]] {
            let t = PartitionTree::build(&dims).unwrap();
            let raw: Vec<f64> = (0..t.leaf_count())
                .map(|_| rng.gen_range(0.01..1.0))
                .collect();
            let total: f64 = raw.iter().sum();
            let q: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let s = t.splits_from_density(&q).unwrap();
            let back = t.terminal_probabilities(&s).unwrap();
            for (a, b) in q.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b} for dims {dims:?}");
            }
        }
    }

    #[test]
    fn path_lengths_equal_depth() {
        for dims in [vec![2], vec![32], vec![4, 8], vec![32, 32]] {
            let t = PartitionTree::build(&dims).unwrap();
            for bin in 0..t.leaf_count() {
                assert_eq!(t.leaf_path(bin).unwrap().len(), t.depth());
            }
        }
    }

    #[test]
    fn clamping_keeps_probabilities_interior() {
        let s = SplitProbabilities::clamped(vec![-1.0, 0.0, 0.5, 1.0, 2.0]);
        for &w in s.values() {
            assert!((SPLIT_CLAMP..=1.0 - SPLIT_CLAMP).contains(&w));
        }
        assert!(SplitProbabilities::new(vec![0.0]).is_err());
        assert!(SplitProbabilities::new(vec![1.0]).is_err());
    }

    #[test]
    fn logit_transform_matches_logistic() {
        let s = SplitProbabilities::from_logits(&[0.0, (7.0f64 / 3.0).ln()]);
        assert!((s.values()[0] - 0.5).abs() < 1e-15);
        assert!((s.values()[1] - 0.7).abs() < 1e-12);
    }
}
