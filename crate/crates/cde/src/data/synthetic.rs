//! Synthetic benchmark generator: each class maps to a random
//! three-component Gaussian mixture over the unit interval, discretized on
//! the grid. Features are a one-hot class indicator plus Gaussian noise,
//! so the conditional density of the target given the features is known
//! exactly and models can be scored against the truth.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiscretizationGrid, GridAxis};
use crate::models::DensityEstimate;
use crate::rng::{derive_seed, rng_from_seed, stream};

use super::Dataset;

/// Number of mixture components per class.
pub const COMPONENTS: usize = 3;

/// One class's target mixture over the unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGmm {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ClassGmm {
    fn validate(&self) -> Result<()> {
        if self.weights.len() != COMPONENTS
            || self.means.len() != COMPONENTS
            || self.scales.len() != COMPONENTS
        {
            return Err(Error::Config(format!(
                "class mixture needs {COMPONENTS} components"
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("mixture weights must form a simplex".into()));
        }
        if self.scales.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Config("mixture scales must be positive".into()));
        }
        Ok(())
    }
}

/// Full generator parameterization. `seed` drives both the mixture draw
/// (via `random`) and sample generation, so a spec value pins the whole
/// dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub gmms: Vec<ClassGmm>,
    pub feature_noise: f64,
    pub bins: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Draw per-class mixtures from the seed: weights bounded away from
    /// zero, means inside the unit interval, scales a few bin widths wide.
    pub fn random(classes: usize, bins: usize, feature_noise: f64, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("need at least one class".into()));
        }
        if bins == 0 {
            return Err(Error::Config("need at least one bin".into()));
        }
        if feature_noise.is_nan() || feature_noise < 0.0 {
            return Err(Error::Config("feature noise must be >= 0".into()));
        }
        let mut rng = rng_from_seed(derive_seed(seed, stream::DATA));
        let mut gmms = Vec::with_capacity(classes);
        for _ in 0..classes {
            let raw: Vec<f64> = (0..COMPONENTS).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let weights = raw.into_iter().map(|w| w / total).collect();
            let means = (0..COMPONENTS).map(|_| rng.gen_range(0.1..0.9)).collect();
            let scales = (0..COMPONENTS).map(|_| rng.gen_range(0.02..0.08)).collect();
            gmms.push(ClassGmm {
                weights,
                means,
                scales,
            });
        }
        Ok(SyntheticSpec {
            classes,
            gmms,
            feature_noise,
            bins,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.gmms.len() != self.classes {
            return Err(Error::Config(format!(
                "{} mixtures for {} classes",
                self.gmms.len(),
                self.classes
            )));
        }
        for g in &self.gmms {
            g.validate()?;
        }
        if self.bins == 0 {
            return Err(Error::Config("need at least one bin".into()));
        }
        Ok(())
    }

    /// The generator's target grid: the unit interval, evenly divided.
    pub fn grid(&self) -> Result<DiscretizationGrid> {
        DiscretizationGrid::new(vec![GridAxis {
            min: 0.0,
            max: 1.0,
            bins: self.bins,
        }])
    }

    /// Exact discretized target density per class: per-component normal
    /// CDF differences over the bin edges, renormalized over the grid.
    pub fn ground_truth(&self) -> Result<Vec<DensityEstimate>> {
        self.validate()?;
        let grid = self.grid()?;
        let edges = grid.axes[0].edges();
        let mut out = Vec::with_capacity(self.classes);
        for g in &self.gmms {
            let mut mass = vec![0.0; self.bins];
            for c in 0..COMPONENTS {
                let (w, mu, s) = (g.weights[c], g.means[c], g.scales[c]);
                let cdf: Vec<f64> = edges.iter().map(|&e| normal_cdf((e - mu) / s)).collect();
                for b in 0..self.bins {
                    mass[b] += w * (cdf[b + 1] - cdf[b]).max(0.0);
                }
            }
            out.push(DensityEstimate::from_unnormalized(mass, grid.clone())?);
        }
        Ok(out)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// A generated dataset together with everything needed to score models
/// against the truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// Class of each row (also recoverable from the one-hot features when
    /// noise is small).
    pub class_labels: Vec<usize>,
    pub grid: DiscretizationGrid,
    pub ground_truth: Vec<DensityEstimate>,
    pub spec: SyntheticSpec,
}

/// Draw `n_samples` rows: class uniform, target bin from the class's
/// discretized mixture, target position uniform within the bin, features
/// one-hot plus Gaussian noise.
pub fn generate(spec: &SyntheticSpec, n_samples: usize) -> Result<SyntheticDataset> {
    spec.validate()?;
    if n_samples < 1 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    let grid = spec.grid()?;
    let ground_truth = spec.ground_truth()?;
    let mut rng = rng_from_seed(derive_seed(spec.seed, stream::SAMPLE));

    let f = spec.classes;
    let mut features = Array2::zeros((n_samples, f));
    let mut targets = Array2::zeros((n_samples, 1));
    let mut class_labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = rng.gen_range(0..spec.classes);
        class_labels.push(class);

        // invert the discrete CDF of the class density
        let u: f64 = rng.gen();
        let probs = ground_truth[class].probs();
        let mut acc = 0.0;
        let mut bin = probs.len() - 1;
        for (b, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                bin = b;
                break;
            }
        }
        let (lo, hi) = grid.bin_bounds(bin)[0];
        targets[[i, 0]] = rng.gen_range(lo..hi);

        for j in 0..f {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = if j == class { 1.0 } else { 0.0 } + spec.feature_noise * noise;
        }
    }
    let source = format!(
        "synthetic(classes={}, bins={}, noise={}, seed={})",
        spec.classes, spec.bins, spec.feature_noise, spec.seed
    );
    let dataset = Dataset::new(features, targets, source)?;
    Ok(SyntheticDataset {
        dataset,
        class_labels,
        grid,
        ground_truth,
        spec: spec.clone(),
    })
}
