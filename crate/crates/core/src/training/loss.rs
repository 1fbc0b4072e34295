//! In-batch softmax loss with label smoothing.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

/// Target distribution for row `i`: `mass` on column `i`, the remainder
/// spread evenly over the other `K - 1` columns.
pub fn smoothed_target_row(k: usize, i: usize, mass: f64) -> Result<Vec<f64>> {
    check_mass(k, mass)?;
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let (diag, off) = target_weights(k, mass);
    Ok((0..k).map(|j| if j == i { diag } else { off }).collect())
}

/// Grid for the off-diagonal weight. Every partial sum of a row is then a
/// multiple of it below 1, hence exact, so rows total exactly 1 in any
/// summation order.
const TARGET_GRID: f64 = (1u64 << 40) as f64;

/// `(diagonal, off-diagonal)` target weights.
fn target_weights(k: usize, mass: f64) -> (f64, f64) {
    if k == 1 {
        return (1.0, 0.0);
    }
    let off = ((1.0 - mass) / (k - 1) as f64 * TARGET_GRID).round() / TARGET_GRID;
    (1.0 - off * (k - 1) as f64, off)
}

fn check_mass(k: usize, mass: f64) -> Result<()> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::invalid(format!("smoothing mass {mass} outside (0, 1]")));
    }
    if k == 1 && mass < 1.0 {
        return Err(Error::invalid(
            "batch of one cannot be smoothed: no negative receives the mass",
        ));
    }
    Ok(())
}

/// Mean entropy of the smoothed target rows; the loss can never go below it.
pub fn target_entropy(k: usize, mass: f64) -> Result<f64> {
    check_mass(k, mass)?;
    let row = smoothed_target_row(k, 0, mass)?;
    Ok(-row.iter().filter(|&&t| t > 0.0).map(|&t| t * t.ln()).sum::<f64>())
}

/// Cross-entropy between smoothed targets and the row softmax of a `K×K`
/// score matrix, averaged over rows. Returns the loss and its gradient with
/// respect to the scores, `(softmax - targets) / K`.
///
/// With `smoothing_mass = 1` this is the negated, `1/K`-scaled in-batch
/// objective `-(1/K) Σ_i [S_ii - log Σ_j exp S_ij]`.
pub fn batch_loss<T: Scalar>(scores: &Tensor<T>, smoothing_mass: f64) -> Result<(f64, Tensor<T>)> {
    let k = scores.rows();
    if scores.shape().len() != 2 || scores.cols() != k || k == 0 {
        return Err(Error::Shape {
            op: "batch_loss",
            left: scores.shape().to_vec(),
            right: vec![k, k],
        });
    }
    check_mass(k, smoothing_mass)?;
    let (diag, off) = target_weights(k, smoothing_mass);
    let inv_k = 1.0 / k as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(k * k);
    for i in 0..k {
        let row = scores.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v.to64()));
        let z: f64 = row.iter().map(|&v| (v.to64() - max).exp()).sum();
        let log_z = max + z.ln();
        for (j, &s) in row.iter().enumerate() {
            let t = if i == j { diag } else { off };
            let log_p = s.to64() - log_z;
            if t > 0.0 {
                loss -= t * log_p;
            }
            grad.push(T::of((log_p.exp() - t) * inv_k));
        }
    }
    Ok((loss * inv_k, Tensor::matrix(k, k, grad)?))
}
