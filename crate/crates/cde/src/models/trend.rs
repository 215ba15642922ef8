//! Trend-filtered multinomial head: the multinomial cross entropy plus an
//! L1 penalty on discrete differences of each example's logit vector over
//! the bin-adjacency graph, averaged over the batch.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::trendfilter::{penalty_subgradient, penalty_value, PenaltyMatrix};

use super::multinomial_loss;

/// Mean penalized negative log likelihood and its logit gradient. The
/// penalty weight scales `||D psi_i||_1` per example inside the batch
/// mean; its subgradient uses sign(0) = 0. With `lambda == 0` this calls
/// straight through to the unpenalized loss, so the two heads agree
/// bitwise there.
pub fn cde_tf_loss(
    penalty: &PenaltyMatrix,
    lambda: f64,
    net_out: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    if net_out.ncols() != penalty.signal_len() {
        return Err(Error::Shape(format!(
            "{} logit columns for a {}-bin penalty graph",
            net_out.ncols(),
            penalty.signal_len()
        )));
    }
    let (mut loss, mut upstream) = multinomial_loss(net_out, labels)?;
    if lambda == 0.0 {
        return Ok((loss, upstream));
    }
    let n = net_out.nrows();
    let scale = lambda / n as f64;
    for (i, row) in net_out.outer_iter().enumerate() {
        let psi = row.as_slice().unwrap();
        loss += scale * penalty_value(penalty, psi)?;
        let sub = penalty_subgradient(penalty, psi)?;
        for (j, g) in sub.into_iter().enumerate() {
            upstream[[i, j]] += scale * g;
        }
    }
    Ok((loss, upstream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::multinomial_loss;
    use ndarray::{array, Array2};

    #[test]
    fn zero_lambda_is_bitwise_multinomial() {
        let penalty = PenaltyMatrix::build(&[4], 1).unwrap();
        let out = array![[0.3, -0.2, 1.5, 0.0], [2.0, 2.0, -1.0, 0.5]];
        let labels = vec![2, 0];
        let (l0, u0) = cde_tf_loss(&penalty, 0.0, &out, &labels).unwrap();
        let (lm, um) = multinomial_loss(&out, &labels).unwrap();
        assert_eq!(l0.to_bits(), lm.to_bits());
        for (a, b) in u0.iter().zip(um.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn penalty_term_adds_scaled_l1() {
        // chain of 4 bins, k = 0: |D psi| = |psi_1-psi_0| + |psi_2-psi_1| +
        // |psi_3-psi_2|; logits (1, 2, 4, 8) -> 7
        let penalty = PenaltyMatrix::build(&[4], 0).unwrap();
        let out = array![[1.0, 2.0, 4.0, 8.0]];
        let labels = vec![0];
        let lambda = 0.5;
        let (l, _) = cde_tf_loss(&penalty, lambda, &out, &labels).unwrap();
        let (lm, _) = multinomial_loss(&out, &labels).unwrap();
        assert!((l - (lm + lambda * 7.0)).abs() < 1e-12);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences_away_from_kinks() {
        let penalty = PenaltyMatrix::build(&[2, 2], 1).unwrap();
        let mut out = array![[0.9, -0.8, 2.1, 0.3], [1.7, 0.2, -0.6, -1.9]];
        let labels = vec![3, 1];
        let lambda = 0.25;
        let (_, up) = cde_tf_loss(&penalty, lambda, &out, &labels).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let orig = out[[i, j]];
                out[[i, j]] = orig + h;
                let (lp, _) = cde_tf_loss(&penalty, lambda, &out, &labels).unwrap();
                out[[i, j]] = orig - h;
                let (lm, _) = cde_tf_loss(&penalty, lambda, &out, &labels).unwrap();
                out[[i, j]] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - up[[i, j]]).abs() < 1e-7,
                    "({i},{j}): fd {fd} vs {}",
                    up[[i, j]]
                );
            }
        }
    }

    #[test]
    fn constant_logits_incur_no_penalty() {
        let penalty = PenaltyMatrix::build(&[8], 2).unwrap();
        let out = Array2::from_elem((3, 8), 1.7);
        let labels = vec![0, 4, 7];
        let (l, _) = cde_tf_loss(&penalty, 10.0, &out, &labels).unwrap();
        let (lm, _) = multinomial_loss(&out, &labels).unwrap();
        assert!((l - lm).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_graph() {
        let penalty = PenaltyMatrix::build(&[8], 0).unwrap();
        let out = Array2::zeros((1, 4));
        assert!(cde_tf_loss(&penalty, 1.0, &out, &[0]).is_err());
    }
}
