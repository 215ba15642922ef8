//! Point-estimate baseline: a plain regression head trained with squared
//! error on the continuous targets. It produces no density, only a
//! conditional mean estimate.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Mean squared error, summed over target dimensions and averaged over the
/// batch, with gradient `2 (pred - target) / n`.
pub fn point_estimate_loss(
    net_out: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if net_out.raw_dim() != targets.raw_dim() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            net_out.shape(),
            targets.shape()
        )));
    }
    let n = net_out.nrows() as f64;
    let diff = net_out - targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let upstream = diff.mapv(|d| 2.0 * d / n);
    Ok((loss, upstream))
}
