//! Multiscale binary-classification head: one logistic splitting
//! probability per internal node of the dyadic partition tree, trained
//! with binary cross entropy along each observed leaf's root-to-leaf path.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::DiscretizationGrid;
use crate::nn::FeedForwardNet;
use crate::partition::{logistic, Branch, PartitionTree, SplitProbabilities};
use crate::rng::{derive_seed, stream};

use super::DensityEstimate;
use super::{softplus, train_net_inner, Minibatch, TrainConfig, TrainData};

/// Mean path binary cross entropy and its gradient with respect to the
/// node logits. `net_out` has one column per internal node (heap order),
/// `labels` are flat bin indices. Only the nodes on an example's path
/// receive gradient from that example.
pub fn multiscale_loss(
    tree: &PartitionTree,
    net_out: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let n = net_out.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if net_out.ncols() != tree.node_count() {
        return Err(Error::Shape(format!(
            "{} logit columns for {} internal nodes",
            net_out.ncols(),
            tree.node_count()
        )));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut upstream = Array2::zeros(net_out.raw_dim());
    for (i, &bin) in labels.iter().enumerate() {
        for &(node, branch) in tree.leaf_path(bin)? {
            let r = net_out[[i, node]];
            // Left carries the split mass w = sigma(r): -ln w = softplus(-r)
            let (bce, grad) = match branch {
                Branch::Left => (softplus(-r), logistic(r) - 1.0),
                Branch::Right => (softplus(r), logistic(r)),
            };
            loss += bce * scale;
            upstream[[i, node]] = grad * scale;
        }
    }
    Ok((loss, upstream))
}

/// Discrete density induced by one example's node logits.
pub fn multiscale_density(
    tree: &PartitionTree,
    logits: &[f64],
    grid: &DiscretizationGrid,
) -> Result<DensityEstimate> {
    let splits = SplitProbabilities::from_logits(logits);
    let probs = tree.terminal_probabilities(&splits)?;
    DensityEstimate::new(probs, grid.clone())
}

/// Train one independent single-output network per internal node. Each
/// node sees only the examples whose target falls inside its region; the
/// binary target is whether the example continues into the left child.
/// Nodes with no covered examples keep their initialization (logit 0,
/// an even split).
pub(crate) fn train_per_node(
    config: &TrainConfig,
    data: &TrainData,
    tree: &PartitionTree,
) -> Result<(Vec<FeedForwardNet>, Vec<f64>)> {
    let n_features = data.features.ncols();
    let mut per_node: Vec<Vec<(usize, f64)>> = vec![Vec::new(); tree.node_count()];
    for (i, &bin) in data.bin_labels.iter().enumerate() {
        for &(node, branch) in tree.leaf_path(bin)? {
            let t = match branch {
                Branch::Left => 1.0,
                Branch::Right => 0.0,
            };
            per_node[node].push((i, t));
        }
    }

    let mut sizes = Vec::with_capacity(config.hidden.len() + 2);
    sizes.push(n_features);
    sizes.extend_from_slice(&config.hidden);
    sizes.push(1);
    let init_seed = derive_seed(config.seed, stream::NET_INIT);

    let mut nets = Vec::with_capacity(tree.node_count());
    let mut trace = vec![0.0; config.epochs];
    for (node, rows) in per_node.iter().enumerate() {
        let seed = derive_seed(init_seed, node as u64 + 1);
        let mut net = FeedForwardNet::init(&sizes, config.activation, seed)?;
        if !rows.is_empty() {
            let idx: Vec<usize> = rows.iter().map(|&(i, _)| i).collect();
            let node_data = TrainData {
                features: data.features.select(ndarray::Axis(0), &idx),
                // reuse the bin-label channel to carry the 0/1 branch target
                bin_labels: rows.iter().map(|&(_, t)| t as usize).collect(),
                targets: Array2::zeros((idx.len(), 0)),
                grid: data.grid.clone(),
            };
            let mut head =
                |out: &Array2<f64>, batch: &Minibatch| node_bce_loss(out, &batch.bin_labels);
            let node_trace = train_net_inner(config, &node_data, &mut net, &mut head)?;
            for (t, v) in trace.iter_mut().zip(node_trace) {
                *t += v;
            }
        }
        nets.push(net);
    }
    Ok((nets, trace))
}

/// Binary cross entropy for a single-logit output column against 0/1
/// branch targets.
fn node_bce_loss(net_out: &Array2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = net_out.nrows();
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut upstream = Array2::zeros(net_out.raw_dim());
    for (i, &t) in targets.iter().enumerate() {
        let r = net_out[[i, 0]];
        if t == 1 {
            loss += softplus(-r) * scale;
            upstream[[i, 0]] = (logistic(r) - 1.0) * scale;
        } else {
            loss += softplus(r) * scale;
            upstream[[i, 0]] = logistic(r) * scale;
        }
    }
    Ok((loss, upstream))
}
