//! Central finite-difference checking of tape gradients.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of the backward rules it is checking.

use super::{Bound, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Largest elementwise relative error between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Relative error with a small absolute floor so that components that are
/// zero up to rounding do not dominate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Compares `backward` against central differences with the given `step`
/// over every scalar in `store`. `loss` must rebuild the whole computation
/// from the bound parameters and be deterministic (seed any RNG inside).
pub fn check<F>(store: &ParamStore, step: f64, mut loss: F) -> Result<GradReport>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = loss(&mut tape, &bound)?;
    let grads = tape.backward(out)?;
    let analytic = store.gradients(&grads, &bound);

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let v = loss(&mut tape, &b)?;
        Ok(tape.value(v).data()[0])
    };

    let mut work = store.clone();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for (pi, a) in analytic.iter().enumerate() {
        let id = ParamId(pi);
        for j in 0..a.len() {
            let orig = work.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(a.data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{j}]", store.name(id));
            }
        }
    }
    Ok(report)
}
