//! Finite-difference verification of analytic gradients.
//!
//! The checker owns nothing about how the analytic gradient is produced; it
//! only needs a pure loss evaluation and the analytic gradient per parameter,
//! so it stays independent of the tape it usually audits.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::ParamSet;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub checked_entries: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// |a - n| / max(1, |a|, |n|): relative for large magnitudes, absolute near
/// zero so central-difference noise on dead entries cannot dominate.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1.0, f64::max(analytic.abs(), numeric.abs()))
}

/// Compare `analytic(params)` against central differences of `eval` for every
/// parameter entry.
pub fn grad_check<S: Scalar>(
    params: &ParamSet<S>,
    eval: &dyn Fn(&ParamSet<S>) -> S,
    analytic: &dyn Fn(&ParamSet<S>) -> Vec<Tensor<S>>,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    grad_check_sampled(params, eval, analytic, eps, tol, None, 0)
}

/// Like `grad_check`, but checking at most `max_entries_per_param` randomly
/// chosen entries of each parameter tensor when a limit is given.
pub fn grad_check_sampled<S: Scalar>(
    params: &ParamSet<S>,
    eval: &dyn Fn(&ParamSet<S>) -> S,
    analytic: &dyn Fn(&ParamSet<S>) -> Vec<Tensor<S>>,
    eps: f64,
    tol: f64,
    max_entries_per_param: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let base = eval(params);
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "grad_check: loss is non-finite ({base})"
        )));
    }
    let grads = analytic(params);
    assert_eq!(grads.len(), params.len(), "analytic grads misaligned");
    let eps_s = S::from_f(eps);
    let mut per_param = Vec::with_capacity(params.len());
    let mut work = params.clone();
    for pi in 0..params.len() {
        let name = params.name_at(pi).to_string();
        let n = params.tensor_at(pi).numel();
        let entries: Vec<usize> = match max_entries_per_param {
            Some(limit) if n > limit => {
                let mut all: Vec<usize> = (0..n).collect();
                let mut rng = rng::stream(seed, &format!("gradcheck:{name}"));
                all.shuffle(&mut rng);
                all.truncate(limit);
                all
            }
            _ => (0..n).collect(),
        };
        let mut max_err = 0.0f64;
        for &ei in &entries {
            let orig = work.tensor_at(pi).data()[ei];
            work.tensor_at_mut(pi).data_mut()[ei] = orig + eps_s;
            let plus = eval(&work).to_f();
            work.tensor_at_mut(pi).data_mut()[ei] = orig - eps_s;
            let minus = eval(&work).to_f();
            work.tensor_at_mut(pi).data_mut()[ei] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "grad_check: non-finite loss while perturbing {name}[{ei}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[pi].data()[ei].to_f();
            max_err = max_err.max(rel_err(a, numeric));
        }
        per_param.push(GradCheckEntry {
            name,
            max_rel_err: max_err,
            checked_entries: entries.len(),
        });
    }
    let max_rel_err = per_param
        .iter()
        .map(|e| e.max_rel_err)
        .fold(0.0f64, f64::max);
    let _ = tol;
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
    })
}
