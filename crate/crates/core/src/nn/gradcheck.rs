use std::sync::Arc;

use super::{ForwardCtx, Layer};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Scalar loss built from the layer output for gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCheckLoss {
    /// Sum of all outputs.
    Sum,
    /// Sum of outputs weighted by a fixed uniform(-1, 1) vector. Unlike
    /// `Sum`, this does not vanish identically for batch norm and softmax.
    Projection { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Where the worst error occurred, e.g. `input 0 [12]` or `param kernel [3]`.
    pub worst: String,
    pub checked: usize,
}

fn weighted_loss(y: &Tensor<f64>, w: &Tensor<f64>, what: &str) -> Result<f64> {
    y.check_finite(what)?;
    Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
}

fn forward(layer: &Layer<f64>, inputs: &[Tensor<f64>], ctx: &ForwardCtx) -> Result<Tensor<f64>> {
    let inputs: Vec<_> = inputs.iter().cloned().map(Arc::new).collect();
    let (y, _) = layer.forward(&inputs, ctx)?;
    Ok(Arc::unwrap_or_clone(y))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backward against central finite differences in `f64`.
///
/// Returns the maximum of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// over every input element and every trainable parameter.
pub fn grad_check(
    layer: &Layer<f64>,
    inputs: &[Tensor<f64>],
    ctx: &ForwardCtx,
    eps: f64,
    loss: GradCheckLoss,
) -> Result<GradCheckReport> {
    let shared: Vec<_> = inputs.iter().cloned().map(Arc::new).collect();
    let (y, cache) = layer.forward(&shared, ctx)?;
    y.check_finite("grad_check forward")?;
    let weights = match loss {
        GradCheckLoss::Sum => Tensor::ones(y.shape()),
        GradCheckLoss::Projection { seed } => Tensor::random_uniform(y.shape(), -1.0, 1.0, &mut seed::rng(seed)),
    };
    let analytic = layer.backward(&weights, &cache)?;

    let mut report = GradCheckReport { max_relative_error: 0.0, worst: String::new(), checked: 0 };
    let mut record = |err: f64, at: String| {
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = err.max(report.max_relative_error);
            report.worst = at;
        }
    };

    for (which, grad) in analytic.inputs.iter().enumerate() {
        for i in 0..inputs[which].len() {
            let mut perturbed = inputs.to_vec();
            perturbed[which].data_mut()[i] += eps;
            let plus = weighted_loss(&forward(layer, &perturbed, ctx)?, &weights, "grad_check +eps")?;
            perturbed[which].data_mut()[i] -= 2.0 * eps;
            let minus = weighted_loss(&forward(layer, &perturbed, ctx)?, &weights, "grad_check -eps")?;
            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::Numeric { location: format!("grad_check input {which}"), index: i, value: numeric });
            }
            record(relative_error(grad.data()[i], numeric), format!("input {which} [{i}]"));
        }
    }

    let names: Vec<&'static str> = layer.params().iter().map(|p| p.name).collect();
    for (p, grad) in analytic.params.iter().enumerate() {
        for i in 0..grad.len() {
            let mut probe = layer.clone();
            probe.params_mut()[p].data_mut()[i] += eps;
            let plus = weighted_loss(&forward(&probe, inputs, ctx)?, &weights, "grad_check +eps")?;
            probe.params_mut()[p].data_mut()[i] -= 2.0 * eps;
            let minus = weighted_loss(&forward(&probe, inputs, ctx)?, &weights, "grad_check -eps")?;
            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::Numeric {
                    location: format!("grad_check param {}", names[p]),
                    index: i,
                    value: numeric,
                });
            }
            record(relative_error(grad.data()[i], numeric), format!("param {} [{i}]", names[p]));
        }
    }
    Ok(report)
}
