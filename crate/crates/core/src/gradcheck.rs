//! Central-difference gradient checking.

use crate::error::Result;
use crate::model::{ModelParams, Target};
use crate::params::{ParamIndex, ParamSet};
use crate::scalar::Scalar;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Largest disagreement found between two gradient sets.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − n| / max(|a|, |n|, 1e-8)` over every parameter.
    pub max_rel_error: f64,
    pub worst_tensor: &'static str,
    pub worst_offset: usize,
    pub checked: usize,
}

/// `(L(θ + h e_k) − L(θ − h e_k)) / 2h` for every coordinate `k`.
pub fn numeric_gradient<T, P, F>(params: &P, loss: F, step: f64) -> Result<P>
where
    T: Scalar,
    P: ParamSet<T> + Clone,
    F: Fn(&P) -> Result<T>,
{
    let mut grad = params.clone();
    grad.fill_zero();
    let mut probe = params.clone();
    let h = T::lit(step);
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    for (tensor, &len) in sizes.iter().enumerate() {
        for offset in 0..len {
            let at = ParamIndex { tensor, offset };
            let orig = crate::params::get_param(&probe, at);
            crate::params::set_param(&mut probe, at, orig + h);
            let up = loss(&probe)?;
            crate::params::set_param(&mut probe, at, orig - h);
            let down = loss(&probe)?;
            crate::params::set_param(&mut probe, at, orig);
            crate::params::set_param(&mut grad, at, (up - down) / (h + h));
        }
    }
    Ok(grad)
}

/// Compares two gradient sets entry by entry.
pub fn compare_gradients<T: Scalar, P: ParamSet<T>>(analytic: &P, numeric: &P) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: "",
        worst_offset: 0,
        checked: 0,
    };
    for ((name, a), (_, n)) in analytic.tensors().into_iter().zip(numeric.tensors()) {
        for (k, (&x, &y)) in a.iter().zip(n).enumerate() {
            let (x, y) = (x.as_f64(), y.as_f64());
            let denom = x.abs().max(y.abs()).max(1e-8);
            let err = (x - y).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst_tensor = name;
                report.worst_offset = k;
            }
        }
    }
    report
}

/// Analytic vs numeric gradient of one sequence's loss through the whole model.
pub fn gradient_check<X: AsRef<[f64]>>(
    params: &ModelParams<f64>,
    xs: &[X],
    target: Target<'_, f64>,
) -> Result<GradCheckReport> {
    let (_, analytic) = params.loss_and_grad(xs, target, None)?;
    let numeric = numeric_gradient(params, |p| p.loss(xs, target), FD_STEP)?;
    Ok(compare_gradients(&analytic, &numeric))
}
