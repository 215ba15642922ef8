//! Flat multinomial head: softmax over all bins with cross-entropy loss.
//! The trend-filtered head reuses this exact function for its data term,
//! so a zero penalty weight reproduces these numbers bit for bit.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::log_sum_exp;

/// Mean negative log likelihood of the labeled bins under per-row softmax,
/// plus the gradient with respect to the logits:
/// `(softmax(row) - onehot(label)) / n`.
pub fn multinomial_loss(net_out: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = net_out.nrows();
    let d = net_out.ncols();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= d) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {d} bins"
        )));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut upstream = Array2::zeros(net_out.raw_dim());
    for (i, &label) in labels.iter().enumerate() {
        let row = net_out.row(i);
        let logits = row.as_slice().unwrap();
        let lse = log_sum_exp(logits);
        loss += (lse - logits[label]) * scale;
        for j in 0..d {
            let p = (logits[j] - lse).exp();
            upstream[[i, j]] = (p - if j == label { 1.0 } else { 0.0 }) * scale;
        }
    }
    Ok((loss, upstream))
}
