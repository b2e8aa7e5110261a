//! Central finite-difference check of [`Model::backward`].
//!
//! The numerical side always runs on an `f64` copy of the model, so the
//! reference is accurate even when checking an `f32` backward pass.

use super::model::Model;
use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Magnitudes below this are compared absolutely rather than relatively.
    pub abs_floor: f64,
    /// Check at most this many components per tensor (evenly strided).
    pub max_per_tensor: Option<usize>,
}

impl GradCheckOptions {
    pub fn for_precision<R: Real>() -> Self {
        // The differences are taken in f64 either way. The f32 step is
        // smaller because f32 checks run on wider stacks, where a step of
        // 1e-4 straddles ReLU and pooling near-ties.
        if R::NAME == "f32" {
            Self {
                step: 1e-6,
                abs_floor: 1e-5,
                max_per_tensor: None,
            }
        } else {
            Self {
                step: 1e-5,
                abs_floor: 1e-9,
                max_per_tensor: None,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `model.backward` against central differences.
pub fn grad_check<R: Real>(
    model: &Model<R>,
    inputs: &[&[R]],
    labels: &[&[bool]],
    tolerance: f64,
    opts: GradCheckOptions,
) -> GradCheckReport {
    match model.backward(inputs, labels) {
        Ok(g) => grad_check_against(model, inputs, labels, &g.grads, tolerance, opts),
        Err(e) => GradCheckReport {
            max_rel_error: f64::INFINITY,
            worst_param: format!("backward failed: {e}"),
            worst_index: 0,
            checked: 0,
            tolerance,
            passed: false,
        },
    }
}

/// Same check for caller-supplied analytic gradients.
pub fn grad_check_against<R: Real>(
    model: &Model<R>,
    inputs: &[&[R]],
    labels: &[&[bool]],
    analytic: &[Tensor<R>],
    tolerance: f64,
    opts: GradCheckOptions,
) -> GradCheckReport {
    let mut probe: Model<f64> = model.cast();
    let inputs64: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| x.iter().map(|v| v.as_f64()).collect())
        .collect();
    let input_refs: Vec<&[f64]> = inputs64.iter().map(Vec::as_slice).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        tolerance,
        passed: true,
    };
    if analytic.len() != probe.params().len() {
        report.max_rel_error = f64::INFINITY;
        report.worst_param = "gradient count mismatch".into();
        report.passed = false;
        return report;
    }
    let loss_at = |m: &Model<f64>| m.loss(&input_refs, labels).unwrap_or(f64::NAN);
    for (pi, grad) in analytic.iter().enumerate() {
        let n = probe.params()[pi].tensor.len();
        let stride = opts
            .max_per_tensor
            .map_or(1, |cap| n.div_ceil(cap.max(1)).max(1));
        for idx in (0..n).step_by(stride) {
            let orig = probe.params()[pi].tensor.data()[idx];
            probe.params_mut()[pi].tensor.data_mut()[idx] = orig + opts.step;
            let up = loss_at(&probe);
            probe.params_mut()[pi].tensor.data_mut()[idx] = orig - opts.step;
            let down = loss_at(&probe);
            probe.params_mut()[pi].tensor.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = grad.data().get(idx).map_or(f64::NAN, |v| v.as_f64());
            let scale = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (a - numeric).abs() / scale;
            report.checked += 1;
            if !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = probe.params()[pi].name.clone();
                report.worst_index = idx;
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    report
}
