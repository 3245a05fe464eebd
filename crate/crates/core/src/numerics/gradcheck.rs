use super::param::ParamTensor;

/// Anything that exposes its trainable tensors in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.value.data().len()).sum()
    }
}

/// Worst disagreement found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares analytic gradients against central finite differences for
/// every parameter entry.
///
/// `loss_fn(state, accumulate)` must return the loss; when `accumulate`
/// is true it must also add the analytic gradient into each tensor's
/// `grad`. Entries where `|analytic| + |numeric| < 1e-8` are skipped.
pub fn grad_check<S, F>(state: &mut S, h: f64, mut loss_fn: F) -> GradCheckReport
where
    S: Parameterized,
    F: FnMut(&mut S, bool) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    state.zero_grads();
    loss_fn(state, true);
    let analytic: Vec<Vec<f64>> = state
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    state.zero_grads();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = state.params()[pi].value.data()[k];
            state.params_mut()[pi].value.data_mut()[k] = orig + h;
            let f_plus = loss_fn(state, false);
            state.params_mut()[pi].value.data_mut()[k] = orig - h;
            let f_minus = loss_fn(state, false);
            state.params_mut()[pi].value.data_mut()[k] = orig;
            let n = (f_plus - f_minus) / (2.0 * h);
            let denom = a.abs() + n.abs();
            if denom < 1e-8 {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let rel = (a - n).abs() / denom;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst_param = state.params()[pi].name.clone();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    report
}
