//! The estimator heads: multiscale nets, trend-filtered multinomials,
//! plain multinomials, mixture density networks, and a point-estimate
//! regressor. Every head defines a loss over raw network outputs plus a
//! predictor; training runs the shared minibatch loop in this module.

mod mdn;
mod multinomial;
mod multiscale;
mod point;
mod trend;

pub use mdn::{mdn_discrete_density, mdn_loss, mdn_output_dim, GmmParams};
pub use multinomial::multinomial_loss;
pub use multiscale::{multiscale_density, multiscale_loss};
pub use point::point_estimate_loss;
pub use trend::cde_tf_loss;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DiscretizationGrid;
use crate::nn::{Activation, FeedForwardNet, Optimizer, OptimizerKind};
use crate::partition::PartitionTree;
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::trendfilter::PenaltyMatrix;

/// Discrete distribution over the bins of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    probs: Vec<f64>,
    grid: DiscretizationGrid,
}

impl DensityEstimate {
    /// Wrap probabilities that already form a distribution over the grid.
    pub fn new(probs: Vec<f64>, grid: DiscretizationGrid) -> Result<Self> {
        if probs.len() != grid.total_bins() {
            return Err(Error::Shape(format!(
                "{} probabilities for {} bins",
                probs.len(),
                grid.total_bins()
            )));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Data(
                "density entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("density sums to {sum}, expected 1")));
        }
        Ok(DensityEstimate { probs, grid })
    }

    /// Normalize nonnegative masses into a distribution. Zero total mass
    /// falls back to uniform.
    pub fn from_unnormalized(mass: Vec<f64>, grid: DiscretizationGrid) -> Result<Self> {
        if mass.len() != grid.total_bins() {
            return Err(Error::Shape(format!(
                "{} masses for {} bins",
                mass.len(),
                grid.total_bins()
            )));
        }
        let total: f64 = mass.iter().sum();
        let probs = if total > 0.0 && total.is_finite() {
            mass.into_iter().map(|m| m / total).collect()
        } else {
            vec![1.0 / mass.len() as f64; mass.len()]
        };
        Ok(DensityEstimate { probs, grid })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn grid(&self) -> &DiscretizationGrid {
        &self.grid
    }

    pub fn prob(&self, bin: usize) -> f64 {
        self.probs[bin]
    }

    /// Expectation of the bin centers under the density, per dimension.
    pub fn point_prediction(&self) -> Vec<f64> {
        let d = self.grid.ndim();
        let mut out = vec![0.0; d];
        for (bin, &p) in self.probs.iter().enumerate() {
            let c = self.grid.bin_center(bin);
            for j in 0..d {
                out[j] += p * c[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Multiscale,
    CdeTf,
    Multinomial,
    Mdn,
    Point,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Multiscale => "multiscale",
            ModelKind::CdeTf => "cde_tf",
            ModelKind::Multinomial => "multinomial",
            ModelKind::Mdn => "mdn",
            ModelKind::Point => "point",
        }
    }

    /// True if the model produces a discrete density (everything except
    /// the point-estimate baseline).
    pub fn is_density_model(&self) -> bool {
        !matches!(self, ModelKind::Point)
    }

    pub const ALL: [ModelKind; 5] = [
        ModelKind::Multiscale,
        ModelKind::CdeTf,
        ModelKind::Multinomial,
        ModelKind::Mdn,
        ModelKind::Point,
    ];
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model '{s}'; expected one of multiscale, cde_tf, multinomial, mdn, point"
                ))
            })
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_m() -> usize {
    3
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

/// Everything needed to train one model head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Trend-filtering penalty weight.
    #[serde(default)]
    pub lambda: f64,
    /// Trend-filtering penalty order.
    #[serde(default)]
    pub k: usize,
    /// Mixture components for the MDN head.
    #[serde(default = "default_m")]
    pub m_components: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Train one independent network per partition node instead of a
    /// shared trunk (multiscale only).
    #[serde(default)]
    pub multiscale_per_node: bool,
}

impl TrainConfig {
    pub fn new(model: ModelKind, seed: u64) -> Self {
        TrainConfig {
            model,
            lambda: 0.0,
            k: 0,
            m_components: default_m(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            seed,
            hidden: default_hidden(),
            activation: default_activation(),
            optimizer: default_optimizer(),
            multiscale_per_node: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.m_components < 1 {
            return Err(Error::Config("m_components must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Training view of a dataset split: features plus both target encodings.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub features: Array2<f64>,
    /// Flat bin index per row.
    pub bin_labels: Vec<usize>,
    /// Continuous targets, one row per example.
    pub targets: Array2<f64>,
    pub grid: DiscretizationGrid,
}

impl TrainData {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A trained estimator ready for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    Multiscale {
        tree: PartitionTree,
        grid: DiscretizationGrid,
        trunk: MultiscaleNet,
    },
    CdeTf {
        penalty: PenaltyMatrix,
        lambda: f64,
        grid: DiscretizationGrid,
        net: FeedForwardNet,
    },
    Multinomial {
        grid: DiscretizationGrid,
        net: FeedForwardNet,
    },
    Mdn {
        m_components: usize,
        target_dim: usize,
        grid: DiscretizationGrid,
        net: FeedForwardNet,
    },
    Point {
        target_dim: usize,
        net: FeedForwardNet,
    },
}

/// Multiscale parametrization: one shared trunk emitting all node logits,
/// or one independent network per internal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MultiscaleNet {
    Shared(FeedForwardNet),
    PerNode(Vec<FeedForwardNet>),
}

impl MultiscaleNet {
    /// Node logits for a feature batch, one column per internal node.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            MultiscaleNet::Shared(net) => net.forward(x),
            MultiscaleNet::PerNode(nets) => {
                let mut out = Array2::zeros((x.nrows(), nets.len()));
                for (j, net) in nets.iter().enumerate() {
                    let col = net.forward(x)?;
                    out.column_mut(j).assign(&col.column(0));
                }
                Ok(out)
            }
        }
    }
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Multiscale { .. } => ModelKind::Multiscale,
            TrainedModel::CdeTf { .. } => ModelKind::CdeTf,
            TrainedModel::Multinomial { .. } => ModelKind::Multinomial,
            TrainedModel::Mdn { .. } => ModelKind::Mdn,
            TrainedModel::Point { .. } => ModelKind::Point,
        }
    }

    pub fn grid(&self) -> Option<&DiscretizationGrid> {
        match self {
            TrainedModel::Multiscale { grid, .. }
            | TrainedModel::CdeTf { grid, .. }
            | TrainedModel::Multinomial { grid, .. }
            | TrainedModel::Mdn { grid, .. } => Some(grid),
            TrainedModel::Point { .. } => None,
        }
    }

    /// Discrete densities for a feature batch; `None` for the point model.
    pub fn predict_density_batch(&self, x: &Array2<f64>) -> Result<Option<Vec<DensityEstimate>>> {
        match self {
            TrainedModel::Multiscale { tree, grid, trunk } => {
                let logits = trunk.logits(x)?;
                let mut out = Vec::with_capacity(x.nrows());
                for row in logits.axis_iter(Axis(0)) {
                    out.push(multiscale_density(tree, row.as_slice().unwrap(), grid)?);
                }
                Ok(Some(out))
            }
            TrainedModel::CdeTf { grid, net, .. } | TrainedModel::Multinomial { grid, net } => {
                let logits = net.forward(x)?;
                let mut out = Vec::with_capacity(x.nrows());
                for row in logits.axis_iter(Axis(0)) {
                    let probs = softmax(row.as_slice().unwrap());
                    out.push(DensityEstimate::new(probs, grid.clone())?);
                }
                Ok(Some(out))
            }
            TrainedModel::Mdn {
                m_components,
                target_dim,
                grid,
                net,
            } => {
                let raw = net.forward(x)?;
                let mut out = Vec::with_capacity(x.nrows());
                for row in raw.axis_iter(Axis(0)) {
                    let params =
                        GmmParams::from_raw(row.as_slice().unwrap(), *m_components, *target_dim)?;
                    out.push(mdn_discrete_density(&params, grid)?);
                }
                Ok(Some(out))
            }
            TrainedModel::Point { .. } => Ok(None),
        }
    }

    pub fn predict_density(&self, x: &[f64]) -> Result<Option<DensityEstimate>> {
        let xb = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.predict_density_batch(&xb)?.map(|mut v| v.remove(0)))
    }

    /// Point predictions for a feature batch, one row per example.
    pub fn predict_point_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            TrainedModel::Point { target_dim, net } => {
                let y = net.forward(x)?;
                debug_assert_eq!(y.ncols(), *target_dim);
                Ok(y)
            }
            TrainedModel::Mdn {
                m_components,
                target_dim,
                net,
                ..
            } => {
                // mixture mean: the MDN is natively continuous
                let raw = net.forward(x)?;
                let mut out = Array2::zeros((x.nrows(), *target_dim));
                for (i, row) in raw.axis_iter(Axis(0)).enumerate() {
                    let params =
                        GmmParams::from_raw(row.as_slice().unwrap(), *m_components, *target_dim)?;
                    let mean = params.mixture_mean();
                    for (j, v) in mean.into_iter().enumerate() {
                        out[[i, j]] = v;
                    }
                }
                Ok(out)
            }
            _ => {
                let densities = self
                    .predict_density_batch(x)?
                    .expect("density models produce densities");
                let d = self.grid().unwrap().ndim();
                let mut out = Array2::zeros((x.nrows(), d));
                for (i, density) in densities.iter().enumerate() {
                    for (j, v) in density.point_prediction().into_iter().enumerate() {
                        out[[i, j]] = v;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Numerically stable softmax of a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// log(sum(exp(logits))) with max shift.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Train the configured model on `data`. The per-head loss closures all
/// flow through the same minibatch loop, so determinism and divergence
/// handling are uniform.
pub fn train(config: &TrainConfig, data: &TrainData) -> Result<TrainedModel> {
    Ok(train_traced(config, data)?.0)
}

/// Like `train`, also returning the mean minibatch loss per epoch (for the
/// per-node multiscale variant: summed over node problems).
pub fn train_traced(config: &TrainConfig, data: &TrainData) -> Result<(TrainedModel, Vec<f64>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty split".into()));
    }
    let n_features = data.features.ncols();
    let d_bins = data.grid.total_bins();
    let target_dim = data.targets.ncols();

    match config.model {
        ModelKind::Multiscale => {
            let tree = PartitionTree::build(&data.grid.dims())?;
            if config.multiscale_per_node {
                let (nets, trace) = multiscale::train_per_node(config, data, &tree)?;
                Ok((
                    TrainedModel::Multiscale {
                        tree,
                        grid: data.grid.clone(),
                        trunk: MultiscaleNet::PerNode(nets),
                    },
                    trace,
                ))
            } else {
                let sizes = layer_sizes(n_features, &config.hidden, tree.node_count());
                let (net, trace) = train_with_head(config, data, &sizes, |net_out, batch| {
                    multiscale_loss(&tree, net_out, &batch.bin_labels)
                })?;
                Ok((
                    TrainedModel::Multiscale {
                        tree,
                        grid: data.grid.clone(),
                        trunk: MultiscaleNet::Shared(net),
                    },
                    trace,
                ))
            }
        }
        ModelKind::CdeTf => {
            let penalty = PenaltyMatrix::build(&data.grid.dims(), config.k)?;
            let lambda = config.lambda;
            let sizes = layer_sizes(n_features, &config.hidden, d_bins);
            let (net, trace) = train_with_head(config, data, &sizes, |net_out, batch| {
                cde_tf_loss(&penalty, lambda, net_out, &batch.bin_labels)
            })?;
            Ok((
                TrainedModel::CdeTf {
                    penalty,
                    lambda,
                    grid: data.grid.clone(),
                    net,
                },
                trace,
            ))
        }
        ModelKind::Multinomial => {
            let sizes = layer_sizes(n_features, &config.hidden, d_bins);
            let (net, trace) = train_with_head(config, data, &sizes, |net_out, batch| {
                multinomial_loss(net_out, &batch.bin_labels)
            })?;
            Ok((
                TrainedModel::Multinomial {
                    grid: data.grid.clone(),
                    net,
                },
                trace,
            ))
        }
        ModelKind::Mdn => {
            let m = config.m_components;
            let out = mdn_output_dim(m, target_dim);
            let sizes = layer_sizes(n_features, &config.hidden, out);
            let (net, trace) = train_with_head(config, data, &sizes, |net_out, batch| {
                mdn_loss(net_out, &batch.targets, m)
            })?;
            Ok((
                TrainedModel::Mdn {
                    m_components: m,
                    target_dim,
                    grid: data.grid.clone(),
                    net,
                },
                trace,
            ))
        }
        ModelKind::Point => {
            let sizes = layer_sizes(n_features, &config.hidden, target_dim);
            let (net, trace) = train_with_head(config, data, &sizes, |net_out, batch| {
                point_estimate_loss(net_out, &batch.targets)
            })?;
            Ok((TrainedModel::Point { target_dim, net }, trace))
        }
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// One minibatch worth of training data.
pub struct Minibatch {
    pub features: Array2<f64>,
    pub bin_labels: Vec<usize>,
    pub targets: Array2<f64>,
}

pub(crate) fn train_with_head<F>(
    config: &TrainConfig,
    data: &TrainData,
    layer_sizes: &[usize],
    mut head: F,
) -> Result<(FeedForwardNet, Vec<f64>)>
where
    F: FnMut(&Array2<f64>, &Minibatch) -> Result<(f64, Array2<f64>)>,
{
    let net_seed = derive_seed(config.seed, stream::NET_INIT);
    let mut net = FeedForwardNet::init(layer_sizes, config.activation, net_seed)?;
    let trace = train_net_inner(config, data, &mut net, &mut head)?;
    Ok((net, trace))
}

/// Runs the epoch/minibatch loop on an already initialized network.
/// Returns the mean minibatch loss per epoch (weighted by batch size).
pub(crate) fn train_net_inner<F>(
    config: &TrainConfig,
    data: &TrainData,
    net: &mut FeedForwardNet,
    head: &mut F,
) -> Result<Vec<f64>>
where
    F: FnMut(&Array2<f64>, &Minibatch) -> Result<(f64, Array2<f64>)>,
{
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let n = data.len();
    let shuffle_seed = derive_seed(config.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = rng_from_seed(derive_seed(shuffle_seed, epoch as u64));
        crate::rng::shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = gather_batch(data, chunk);
            let (out, cache) = net.forward_cached(&batch.features)?;
            let (loss, upstream) = head(&out, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!(
                    "loss diverged to {loss} at epoch {epoch}"
                )));
            }
            epoch_loss += loss * chunk.len() as f64;
            let (grads, _) = net.backward(&cache, &upstream)?;
            opt.step(net, &grads)?;
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok(trace)
}

fn gather_batch(data: &TrainData, idx: &[usize]) -> Minibatch {
    let f = data.features.select(Axis(0), idx);
    let t = data.targets.select(Axis(0), idx);
    let labels = idx.iter().map(|&i| data.bin_labels[i]).collect();
    Minibatch {
        features: f,
        bin_labels: labels,
        targets: t,
    }
}

/// Mean loss of a head over a full dataset without training; used for
/// monitoring and tests.
pub fn evaluate_loss<F>(net: &FeedForwardNet, data: &TrainData, mut head: F) -> Result<f64>
where
    F: FnMut(&Array2<f64>, &Minibatch) -> Result<(f64, Array2<f64>)>,
{
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch = gather_batch(data, &idx);
    let out = net.forward(&batch.features)?;
    Ok(head(&out, &batch)?.0)
}
