//! Central finite-difference gradient checks in `f64`.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Round-off allowance of a central difference, in units of
/// `ε_machine · max(|f(x+h)|, |f(x-h)|) / h`.
pub const ROUNDOFF_ULPS: f64 = 16.0;

/// Worst disagreement between analytic and numeric gradients.
///
/// A central difference cannot resolve a disagreement below its own
/// round-off bound ([`roundoff_bound`]); such coordinates still enter
/// `max_rel_error` but are left out of `max_resolved_error`, which decides
/// [`passed`](Self::passed).
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |a - n| / max(1e-8, |a| + |n|)` over all coordinates; infinite
    /// when anything was NaN.
    pub max_rel_error: f64,
    /// The same maximum over coordinates whose `|a - n|` exceeds the
    /// round-off bound.
    pub max_resolved_error: f64,
    /// Where the worst resolvable coordinate lives: input index (or
    /// parameter name) and flat offset.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose disagreement is within the round-off bound.
    pub noise_limited: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            max_resolved_error: 0.0,
            worst: None,
            checked: 0,
            noise_limited: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, roundoff: f64, label: impl FnOnce() -> (String, usize)) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error || err.is_infinite() {
            self.max_rel_error = err;
        }
        if (analytic - numeric).abs() <= roundoff {
            self.noise_limited += 1;
            return;
        }
        if err > self.max_resolved_error || (err.is_infinite() && !self.max_resolved_error.is_infinite()) {
            self.max_resolved_error = err;
            self.worst = Some(label());
        }
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_resolved_error.is_finite() && self.max_resolved_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.is_nan() || numeric.is_nan() {
        return f64::INFINITY;
    }
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Round-off bound of `(up - down) / 2h`.
pub fn roundoff_bound(up: f64, down: f64, eps: f64) -> f64 {
    ROUNDOFF_ULPS * f64::EPSILON * up.abs().max(down.abs()) / eps
}

/// Checks `f` (scalar-valued) with respect to every coordinate of `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheckReport::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for j in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[j];
            work[k].data_mut()[j] = x0 + eps;
            let up = eval(&work)?;
            work[k].data_mut()[j] = x0 - eps;
            let down = eval(&work)?;
            work[k].data_mut()[j] = x0;
            let bound = roundoff_bound(up, down, eps);
            report.record(analytic[j], (up - down) / (2.0 * eps), bound, || (format!("input {k}"), j));
        }
    }
    Ok(report)
}

/// Checks a parameterised scalar function with respect to the parameters
/// accepted by `select`. Parameters are restored before returning.
pub fn grad_check_params<F, S>(store: &mut ParamStore, eps: f64, select: S, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
    S: Fn(&str) -> bool,
{
    let (analytic, ids) = {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        let grads = tape.backward(out)?;
        let ids: Vec<ParamId> = store.iter().filter(|(_, n, t)| t.requires_grad && select(n)).map(|(id, _, _)| id).collect();
        let analytic: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; store.get(id).numel()]))
            .collect();
        (analytic, ids)
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        Ok(tape.scalar(out))
    };
    let mut report = GradCheckReport::new();
    for (id, a) in ids.iter().zip(&analytic) {
        for j in 0..a.len() {
            let x0 = store.get(*id).data()[j];
            store.get_mut(*id).data_mut()[j] = x0 + eps;
            let up = eval(store)?;
            store.get_mut(*id).data_mut()[j] = x0 - eps;
            let down = eval(store)?;
            store.get_mut(*id).data_mut()[j] = x0;
            let bound = roundoff_bound(up, down, eps);
            report.record(a[j], (up - down) / (2.0 * eps), bound, || (store.name(*id).to_string(), j));
        }
    }
    Ok(report)
}
