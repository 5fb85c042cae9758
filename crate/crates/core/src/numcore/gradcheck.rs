//! Central-difference verification of tape gradients.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are judged by absolute error instead.
    pub abs_floor: f64,
    /// Check at most this many evenly strided entries per parameter.
    pub max_per_param: Option<usize>,
    /// Only parameters whose names start with one of these prefixes.
    pub prefixes: Vec<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-5,
            max_per_param: None,
            prefixes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Parameters whose worst entry exceeds the tolerance.
    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_error > self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Runs `loss_fn` once to obtain analytic gradients by backpropagation, then
/// compares every selected parameter entry against
/// `(f(θ+ε) − f(θ−ε)) / 2ε`.
pub fn finite_diff_check<F>(mut loss_fn: F, store: &mut ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Tape, Var)>,
{
    store.zero_grads();
    let (tape, loss) = loss_fn(store)?;
    tape.backward(loss, 1.0, store)?;
    let analytic: BTreeMap<String, Vec<f64>> = store
        .iter()
        .map(|(n, p)| (n.to_string(), p.grad.data().to_vec()))
        .collect();
    store.zero_grads();
    compare_with_numeric(&analytic, store, opts, |s| {
        let (t, l) = loss_fn(s)?;
        Ok(t.scalar(l))
    })
}

/// Compares supplied analytic gradients with central differences of `value_fn`.
pub fn compare_with_numeric<F>(
    analytic: &BTreeMap<String, Vec<f64>>,
    store: &mut ParamStore,
    opts: &GradCheckOptions,
    mut value_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let selected: Vec<String> = store
        .names()
        .filter(|n| opts.prefixes.is_empty() || opts.prefixes.iter().any(|p| n.starts_with(p.as_str())))
        .map(str::to_string)
        .collect();
    let mut params = Vec::new();
    for name in selected {
        let grads = analytic
            .get(&name)
            .ok_or_else(|| Error::Argument(format!("no analytic gradient for `{name}`")))?;
        let n = grads.len();
        let stride = match opts.max_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        let mut check = ParamCheck {
            name: name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in (0..n).step_by(stride) {
            let orig = store.value(&name)?.data()[idx];
            store.value_mut(&name)?.data_mut()[idx] = orig + opts.eps;
            let plus = value_fn(store);
            store.value_mut(&name)?.data_mut()[idx] = orig - opts.eps;
            let minus = value_fn(store);
            store.value_mut(&name)?.data_mut()[idx] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing `{name}`[{idx}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let err = relative_error(grads[idx], numeric, opts.abs_floor);
            check.checked += 1;
            if err > check.max_rel_error || check.checked == 1 {
                check.max_rel_error = err;
                check.worst_index = idx;
                check.analytic = grads[idx];
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params,
        max_rel_error,
        tol: opts.tol,
        passed: max_rel_error <= opts.tol,
    })
}
