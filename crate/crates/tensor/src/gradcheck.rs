//! Central finite-difference verification of tape gradients.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of [`finite_diff_gradcheck`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Coordinates whose gradient is at least [`RELATIVE_FLOOR`] in size, so
    /// the comparison is truly relative rather than absolute.
    pub above_floor: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub const RELATIVE_FLOOR: f64 = 1e-8;

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the backward pass of `f` against `(f(p+h) − f(p−h)) / 2h` for
/// every coordinate of every tensor in `params`.
///
/// `f` receives a fresh tape and one leaf per parameter and must return a
/// scalar node. It has to be deterministic.
pub fn finite_diff_gradcheck<F>(f: F, params: &[Tensor], h: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(TensorError::InvalidArgument(format!(
            "step {h} outside [1e-7, 1e-4]"
        )));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        above_floor: 0,
    };
    let mut work = params.to_vec();
    for (pi, &var) in vars.iter().enumerate() {
        let analytic = grads.tensor(var);
        for e in 0..params[pi].len() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[e];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if a.abs().max(numeric.abs()) >= RELATIVE_FLOOR {
                report.above_floor += 1;
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, e));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
