use ndarray::{Array2, ArrayView2};

use super::mlp::{Gradients, Mlp};
use super::NeuralError;

/// Denominator floor for relative errors, so that gradients which are zero
/// up to rounding are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter block, element)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares [`Mlp::backward`] against central differences over every
/// parameter, noise scales included. Noise is held at its current sample.
///
/// `loss` maps the network output to a scalar and its output gradient.
pub fn grad_check<F>(
    mlp: &Mlp,
    x: ArrayView2<f64>,
    loss: F,
    noise_on: bool,
    tolerance: f64,
) -> Result<GradCheckReport, NeuralError>
where
    F: Fn(ArrayView2<f64>) -> (f64, Array2<f64>),
{
    let (y, cache) = mlp.forward(x, noise_on)?;
    let (_, dy) = loss(y.view());
    let (grads, _) = mlp.backward(&cache, dy.view())?;
    compare_gradients(mlp, x, loss, noise_on, &grads, tolerance)
}

/// Central-difference comparison against a supplied gradient.
pub fn compare_gradients<F>(
    mlp: &Mlp,
    x: ArrayView2<f64>,
    loss: F,
    noise_on: bool,
    analytic: &Gradients,
    tolerance: f64,
) -> Result<GradCheckReport, NeuralError>
where
    F: Fn(ArrayView2<f64>) -> (f64, Array2<f64>),
{
    let eval = |net: &Mlp| -> Result<f64, NeuralError> {
        let y = net.predict(x, noise_on)?;
        Ok(loss(y.view()).0)
    };
    let analytic = analytic.slices();
    let mut probe = mlp.clone();
    let blocks = mlp.param_slices().iter().map(|s| s.len()).collect::<Vec<_>>();
    if blocks.len() != analytic.len() {
        return Err(NeuralError::Shape("gradient layout does not match network".into()));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        tolerance,
    };
    for (b, &len) in blocks.iter().enumerate() {
        for i in 0..len {
            let orig = probe.param_slices()[b][i];
            probe.param_slices_mut()[b][i] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.param_slices_mut()[b][i] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.param_slices_mut()[b][i] = orig;

            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[b][i], numeric);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (b, i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Mean squared error `0.5 * mean((y - target)^2)` and its gradient.
pub fn mse_loss(target: ArrayView2<'_, f64>) -> impl Fn(ArrayView2<f64>) -> (f64, Array2<f64>) + '_ {
    move |y| {
        let n = y.len() as f64;
        let diff = &y - &target;
        let loss = 0.5 * diff.mapv(|d| d * d).sum() / n;
        (loss, diff / n)
    }
}
