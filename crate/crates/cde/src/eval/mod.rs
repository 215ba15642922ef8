//! Test metrics and hyperparameter search: held-out log-probability,
//! pooled RMSE, and the validation-selected grid search over penalty and
//! mixture settings.

pub mod experiment;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{train, GmmParams, ModelKind, TrainConfig, TrainData, TrainedModel};
use crate::rng::{derive_seed, stream};

/// Probability floor applied before taking logs, so a single empty test
/// bin cannot produce negative infinity.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean log-probability (nats per example) of the labeled bins under the
/// model's discrete density. `None` for the point-estimate model, which
/// has no density.
pub fn test_log_prob(
    model: &TrainedModel,
    features: &Array2<f64>,
    bin_labels: &[usize],
) -> Result<Option<f64>> {
    if features.nrows() != bin_labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            bin_labels.len()
        )));
    }
    if bin_labels.is_empty() {
        return Err(Error::Data("no examples to score".into()));
    }
    let Some(densities) = model.predict_density_batch(features)? else {
        return Ok(None);
    };
    let mut total = 0.0;
    for (density, &label) in densities.iter().zip(bin_labels) {
        total += density.prob(label).max(PROB_FLOOR).ln();
    }
    Ok(Some(total / bin_labels.len() as f64))
}

/// Mean log density of the continuous targets under the MDN's mixture,
/// before any discretization. `None` for every other model.
pub fn mdn_continuous_log_prob(
    model: &TrainedModel,
    features: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<Option<f64>> {
    let TrainedModel::Mdn {
        m_components,
        target_dim,
        net,
        ..
    } = model
    else {
        return Ok(None);
    };
    if targets.nrows() != features.nrows() || targets.nrows() == 0 {
        return Err(Error::Shape("feature/target row mismatch".into()));
    }
    let raw = net.forward(features)?;
    let mut total = 0.0;
    for (row, y) in raw.outer_iter().zip(targets.outer_iter()) {
        let params = GmmParams::from_raw(row.as_slice().unwrap(), *m_components, *target_dim)?;
        total += params.log_density(y.as_slice().unwrap());
    }
    Ok(Some(total / targets.nrows() as f64))
}

/// Root mean squared error of the model's point predictions, with squared
/// errors summed over target dimensions before the mean (one number even
/// for multivariate targets).
pub fn test_rmse(
    model: &TrainedModel,
    features: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<f64> {
    if targets.nrows() != features.nrows() || targets.nrows() == 0 {
        return Err(Error::Shape("feature/target row mismatch".into()));
    }
    let preds = model.predict_point_batch(features)?;
    if preds.raw_dim() != targets.raw_dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            preds.shape(),
            targets.shape()
        )));
    }
    let mut total = 0.0;
    for (p, t) in preds.outer_iter().zip(targets.outer_iter()) {
        total += p
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok((total / targets.nrows() as f64).sqrt())
}

/// Hyperparameter ranges for the validation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_ms")]
    pub ms: Vec<usize>,
}

fn default_lambdas() -> Vec<f64> {
    vec![0.001, 0.01, 0.1, 1.0, 10.0]
}
fn default_ks() -> Vec<usize> {
    vec![0, 1, 2]
}
fn default_ms() -> Vec<usize> {
    vec![1, 2, 3, 5, 10]
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            lambdas: default_lambdas(),
            ks: default_ks(),
            ms: default_ms(),
        }
    }
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.ks.is_empty() || self.ms.is_empty() {
            return Err(Error::Config("search grid axes must be nonempty".into()));
        }
        if self.lambdas.iter().any(|&l| l.is_nan() || l < 0.0) {
            return Err(Error::Config("search lambdas must be >= 0".into()));
        }
        if self.ms.iter().any(|&m| m < 1) {
            return Err(Error::Config("search mixture counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// One evaluated grid cell. A cell with an error string diverged during
/// training and is excluded from selection. A trained cell can also lack a
/// validation log-probability (the point model yields no density); it stays
/// selectable but sorts below every scored cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCellResult {
    pub lambda: f64,
    pub k: usize,
    pub m_components: usize,
    pub val_log_prob: Option<f64>,
    pub error: Option<String>,
}

/// Search outcome: the winning model plus the full audit table.
#[derive(Debug)]
pub struct GridSearchOutcome {
    pub model: TrainedModel,
    pub config: TrainConfig,
    pub best_index: usize,
    pub table: Vec<GridCellResult>,
}

impl GridSearchOutcome {
    pub fn best(&self) -> &GridCellResult {
        &self.table[self.best_index]
    }
}

/// Candidate cells for a model kind: the penalized multinomial crosses
/// its penalty weights and orders, the MDN sweeps component counts, and
/// the remaining heads have nothing to search.
fn cells_for(kind: ModelKind, grid: &SearchGrid, base: &TrainConfig) -> Vec<(f64, usize, usize)> {
    match kind {
        ModelKind::CdeTf => {
            let mut cells = Vec::with_capacity(grid.lambdas.len() * grid.ks.len());
            for &lambda in &grid.lambdas {
                for &k in &grid.ks {
                    cells.push((lambda, k, base.m_components));
                }
            }
            cells
        }
        ModelKind::Mdn => grid.ms.iter().map(|&m| (base.lambda, base.k, m)).collect(),
        _ => vec![(base.lambda, base.k, base.m_components)],
    }
}

/// Pick the winning cell: highest validation log-probability, with exact
/// ties broken toward smaller lambda, then smaller k, then fewer mixture
/// components. Returns `None` if every cell failed.
pub fn select_best(table: &[GridCellResult]) -> Option<usize> {
    fn key(c: &GridCellResult) -> (f64, usize, usize) {
        (c.lambda, c.k, c.m_components)
    }
    let mut best: Option<usize> = None;
    for (i, cell) in table.iter().enumerate() {
        if cell.error.is_some() {
            continue;
        }
        let replace = match best {
            None => true,
            Some(b) => {
                let inc = &table[b];
                match (cell.val_log_prob, inc.val_log_prob) {
                    (Some(a), Some(c)) => a > c || (a == c && key(cell) < key(inc)),
                    (Some(_), None) => true,
                    (None, Some(_)) => false,
                    (None, None) => key(cell) < key(inc),
                }
            }
        };
        if replace {
            best = Some(i);
        }
    }
    best
}

/// Train one model per grid cell, score each on the validation split, and
/// return the winner. Divergent cells are recorded and skipped; any other
/// error aborts the search. Cell seeds derive from the cell's own settings
/// rather than its position, so enumeration order cannot change results.
pub fn grid_search(
    grid: &SearchGrid,
    base: &TrainConfig,
    train_data: &TrainData,
    val_features: &Array2<f64>,
    val_labels: &[usize],
) -> Result<GridSearchOutcome> {
    grid.validate()?;
    base.validate()?;
    let cells = cells_for(base.model, grid, base);
    let cell_seed_base = derive_seed(base.seed, stream::CELL);

    let mut table = Vec::with_capacity(cells.len());
    let mut models: Vec<Option<(TrainedModel, TrainConfig)>> = Vec::with_capacity(cells.len());
    for &(lambda, k, m) in &cells {
        let mut config = base.clone();
        config.lambda = lambda;
        config.k = k;
        config.m_components = m;
        config.seed = derive_seed(cell_seed_base, cell_key(lambda, k, m));
        match train(&config, train_data) {
            Ok(model) => {
                let lp = test_log_prob(&model, val_features, val_labels)?;
                table.push(GridCellResult {
                    lambda,
                    k,
                    m_components: m,
                    val_log_prob: lp,
                    error: None,
                });
                models.push(Some((model, config)));
            }
            Err(Error::Train(msg)) => {
                table.push(GridCellResult {
                    lambda,
                    k,
                    m_components: m,
                    val_log_prob: None,
                    error: Some(msg),
                });
                models.push(None);
            }
            Err(other) => return Err(other),
        }
    }

    let best_index = select_best(&table)
        .ok_or_else(|| Error::Train("every grid cell diverged; nothing to select".into()))?;
    let (model, config) = models
        .swap_remove(best_index)
        .expect("selected cell trained");
    Ok(GridSearchOutcome {
        model,
        config,
        best_index,
        table,
    })
}

/// Stable identity for a cell's settings, independent of enumeration
/// order.
fn cell_key(lambda: f64, k: usize, m: usize) -> u64 {
    let mut key = derive_seed(lambda.to_bits(), k as u64);
    key = derive_seed(key, m as u64);
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DiscretizationGrid, GridAxis};
    use crate::models::MultiscaleNet;
    use crate::nn::{Activation, FeedForwardNet};
    use crate::partition::PartitionTree;
    use crate::rng::rng_from_seed;
    use ndarray::Array1;
    use rand::Rng;

    fn grid_1d(bins: usize) -> DiscretizationGrid {
        DiscretizationGrid::new(vec![GridAxis {
            min: 0.0,
            max: 1.0,
            bins,
        }])
        .unwrap()
    }

    /// Multiscale model whose density ignores the input: zero weights,
    /// biases set to the requested node logits.
    fn fixed_density_model(logits: Vec<f64>, bins: usize) -> TrainedModel {
        let n_nodes = bins - 1;
        let mut net = FeedForwardNet::init(&[1, n_nodes], Activation::Identity, 0).unwrap();
        net.set_weights(
            vec![ndarray::Array2::zeros((n_nodes, 1))],
            vec![Array1::from_vec(logits)],
        )
        .unwrap();
        TrainedModel::Multiscale {
            tree: PartitionTree::build(&[bins]).unwrap(),
            grid: grid_1d(bins),
            trunk: MultiscaleNet::Shared(net),
        }
    }

    #[test]
    fn uniform_model_scores_minus_ln_bins() {
        let model = fixed_density_model(vec![0.0; 31], 32);
        let features = Array2::zeros((50, 1));
        let labels: Vec<usize> = (0..50).map(|i| i % 32).collect();
        let lp = test_log_prob(&model, &features, &labels).unwrap().unwrap();
        assert!((lp + (32.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn floor_prevents_negative_infinity() {
        // logits +-40 drive some leaves to ~0 probability
        let model = fixed_density_model(vec![40.0, 40.0, 40.0], 4);
        let features = Array2::zeros((1, 1));
        let lp = test_log_prob(&model, &features, &[3]).unwrap().unwrap();
        assert!(lp.is_finite());
        assert!(lp >= PROB_FLOOR.ln() - 1e-9);
    }

    #[test]
    fn self_consistency_beats_uniform_baseline() {
        // sample bins from the model's own fixed density; the model's mean
        // log-probability estimates -H(p) >= -ln D with equality only at
        // uniform
        let mut rng = rng_from_seed(33);
        let logits: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let model = fixed_density_model(logits, 16);
        let density = model.predict_density(&[0.0]).unwrap().unwrap();
        let n = 10_000;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut bin = 15;
            for (b, &p) in density.probs().iter().enumerate() {
                acc += p;
                if u < acc {
                    bin = b;
                    break;
                }
            }
            labels.push(bin);
        }
        let features = Array2::zeros((n, 1));
        let lp = test_log_prob(&model, &features, &labels).unwrap().unwrap();
        assert!(lp > -(16.0f64).ln());
    }

    #[test]
    fn rmse_examples() {
        let grid = grid_1d(4);
        let tree = PartitionTree::build(&[4]).unwrap();
        // peaked density on bin 1 (center 0.375)
        let mut net = FeedForwardNet::init(&[1, 3], Activation::Identity, 0).unwrap();
        net.set_weights(
            vec![ndarray::Array2::zeros((3, 1))],
            vec![Array1::from_vec(vec![40.0, -40.0, 0.0])],
        )
        .unwrap();
        let model = TrainedModel::Multiscale {
            tree,
            grid,
            trunk: MultiscaleNet::Shared(net),
        };

        let features = Array2::zeros((2, 1));
        let targets = ndarray::array![[0.375], [0.375]];
        let rmse = test_rmse(&model, &features, &targets).unwrap();
        assert!(rmse < 1e-6);

        // constant predictor at the mean has rmse = std
        let targets = ndarray::array![[0.375 - 0.25], [0.375 + 0.25]];
        let rmse = test_rmse(&model, &features, &targets).unwrap();
        assert!((rmse - 0.25).abs() < 1e-6);
    }

    #[test]
    fn pooled_rmse_sums_squared_errors_over_dims() {
        // point model with fixed biases in 2 target dims
        let mut net = FeedForwardNet::init(&[1, 2], Activation::Identity, 0).unwrap();
        net.set_weights(
            vec![ndarray::Array2::zeros((2, 1))],
            vec![Array1::from_vec(vec![3.0, 4.0])],
        )
        .unwrap();
        let model = TrainedModel::Point { target_dim: 2, net };
        let features = Array2::zeros((1, 1));
        let targets = ndarray::array![[0.0, 0.0]];
        // residual (3, 4) pooled -> sqrt(25) = 5
        let rmse = test_rmse(&model, &features, &targets).unwrap();
        assert!((rmse - 5.0).abs() < 1e-12);
    }

    #[test]
    fn point_model_has_no_log_prob() {
        let net = FeedForwardNet::init(&[1, 1], Activation::Identity, 0).unwrap();
        let model = TrainedModel::Point { target_dim: 1, net };
        let features = Array2::zeros((3, 1));
        assert!(test_log_prob(&model, &features, &[0, 0, 0])
            .unwrap()
            .is_none());
    }

    #[test]
    fn selection_prefers_higher_then_smaller_params() {
        let cell = |lambda, k, lp: Option<f64>| GridCellResult {
            lambda,
            k,
            m_components: 1,
            val_log_prob: lp,
            error: lp.is_none().then(|| "diverged".into()),
        };
        // clear winner
        let t = vec![cell(0.1, 0, Some(-2.0)), cell(1.0, 1, Some(-1.0))];
        assert_eq!(select_best(&t), Some(1));
        // exact tie -> smaller lambda
        let t = vec![cell(1.0, 0, Some(-1.0)), cell(0.1, 2, Some(-1.0))];
        assert_eq!(select_best(&t), Some(1));
        // tie on lambda -> smaller k
        let t = vec![cell(0.1, 2, Some(-1.0)), cell(0.1, 0, Some(-1.0))];
        assert_eq!(select_best(&t), Some(1));
        // failed cells are ignored
        let t = vec![cell(0.1, 0, None), cell(10.0, 2, Some(-5.0))];
        assert_eq!(select_best(&t), Some(1));
        // all failed
        let t = vec![cell(0.1, 0, None)];
        assert_eq!(select_best(&t), None);
    }

    #[test]
    fn selection_is_order_invariant() {
        let mut rng = rng_from_seed(5);
        let mut table: Vec<GridCellResult> = Vec::new();
        for &lambda in &[0.001, 0.01, 0.1] {
            for k in 0..3usize {
                table.push(GridCellResult {
                    lambda,
                    k,
                    m_components: 1,
                    val_log_prob: Some(-(rng.gen_range(1..4) as f64)),
                    error: None,
                });
            }
        }
        let best = table[select_best(&table).unwrap()].clone();
        for _ in 0..20 {
            let mut shuffled = table.clone();
            crate::rng::shuffle(&mut shuffled, &mut rng);
            let b = shuffled[select_best(&shuffled).unwrap()].clone();
            assert_eq!(
                (b.lambda, b.k, b.val_log_prob),
                (best.lambda, best.k, best.val_log_prob)
            );
        }
    }

    #[test]
    fn cell_enumeration_matches_model_kind() {
        let grid = SearchGrid::default();
        let base = TrainConfig::new(ModelKind::CdeTf, 1);
        assert_eq!(cells_for(ModelKind::CdeTf, &grid, &base).len(), 15);
        assert_eq!(cells_for(ModelKind::Mdn, &grid, &base).len(), 5);
        assert_eq!(cells_for(ModelKind::Multinomial, &grid, &base).len(), 1);
    }
}
