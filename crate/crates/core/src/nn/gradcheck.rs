//! Central finite differences, used as an independent check on [`Tape::backward`](super::Tape::backward).

use super::ParameterSet;

pub const DEFAULT_STEP: f64 = 3e-4;
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// Estimates `d loss / d p` for every scalar parameter with the fourth-order
/// central stencil `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
///
/// The returned set carries the original values; its gradient slots hold the estimates.
pub fn finite_difference_gradient<F>(mut loss: F, params: &ParameterSet, h: f64) -> ParameterSet
where
    F: FnMut(&ParameterSet) -> f64,
{
    let mut probe = params.clone();
    let mut estimate = params.clone();
    estimate.zero_grads();
    for id in 0..params.len() {
        for k in 0..params.value(id).len() {
            let original = params.value(id).data()[k];
            let mut at = |offset: f64| {
                probe.value_mut(id).data_mut()[k] = original + offset;
                loss(&probe)
            };
            let (up2, up, down, down2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            probe.value_mut(id).data_mut()[k] = original;
            estimate.grad_mut(id).data_mut()[k] = (-up2 + 8.0 * up - 8.0 * down + down2) / (12.0 * h);
        }
    }
    estimate
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Worst relative error between the gradient slots of two sets with the same layout,
/// together with the name of the parameter where it occurs.
pub fn max_relative_error(analytic: &ParameterSet, numeric: &ParameterSet) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for ((name, _, ga), (_, _, gn)) in analytic.iter().zip(numeric.iter()) {
        for (&a, &n) in ga.data().iter().zip(gn.data()) {
            let err = relative_error(a, n);
            if err > worst.0 {
                worst = (err, name.to_string());
            }
        }
    }
    worst
}
