//! Finite-difference check of analytic gradients (fourth-order central
//! differences).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many entries per tensor (seeded sample).
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_entries_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares the gradients accumulated by `loss_fn` against central finite
/// differences of the loss it returns.
///
/// `loss_fn` must evaluate the loss at the current parameter values and
/// accumulate its analytic gradient into the store; gradients are zeroed
/// before every call.
pub fn grad_check<T, F>(
    params: &mut ParamStore<T>,
    options: &GradCheckOptions,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut ParamStore<T>) -> Result<T>,
{
    if !(1e-6..=1e-2).contains(&options.eps) {
        return Err(Error::invalid(format!(
            "grad_check eps {} outside [1e-6, 1e-2]",
            options.eps
        )));
    }
    let mut eval = |params: &mut ParamStore<T>| -> Result<f64> {
        params.zero_grad();
        let loss = loss_fn(params)?.to64();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                detail: "grad_check loss".into(),
            });
        }
        Ok(loss)
    };

    eval(params)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().data().iter().map(|g| g.to64()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let names: Vec<String> = params.iter().map(|p| p.name().to_string()).collect();
    for (pi, name) in names.iter().enumerate() {
        let len = analytic[pi].len();
        let entries: Vec<usize> = match options.max_entries_per_tensor {
            Some(max) if max < len => {
                let mut picked = sample(&mut rng, len, max).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..len).collect(),
        };
        let id = params.id(name).expect("name from store");
        for idx in entries {
            let original = params.value(id).data()[idx];
            // five-point central stencil, O(eps^4) truncation error
            let mut at = |offset: f64, params: &mut ParamStore<T>| -> Result<(f64, f64)> {
                let shifted = original + T::of(offset);
                params.get_mut(id).value_mut().data_mut()[idx] = shifted;
                let loss = eval(params)?;
                // realized offset after rounding to T
                Ok((loss, shifted.to64() - original.to64()))
            };
            let (l1p, h1p) = at(options.eps, params)?;
            let (l1m, h1m) = at(-options.eps, params)?;
            let (l2p, h2p) = at(2.0 * options.eps, params)?;
            let (l2m, h2m) = at(-2.0 * options.eps, params)?;
            params.get_mut(id).value_mut().data_mut()[idx] = original;
            let d1 = (l1p - l1m) / (h1p - h1m);
            let d2 = (l2p - l2m) / (h2p - h2m);
            let numeric = (4.0 * d1 - d2) / 3.0;
            let err = relative_error(analytic[pi][idx], numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    // leave the store with the analytic gradient at the unperturbed point
    eval(params)?;
    Ok(report)
}
