//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::param::{Bound, ParamGroup};
use crate::tape::{Tape, Var};

/// Denominator floor of the relative error, so that near-zero gradients are
/// compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(params: &ParamGroup, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = f(&mut tape, &bound)?;
    let v = tape.scalar(out);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `epsilon`, coordinate by coordinate, over every
/// parameter in `params`. Returns the worst relative error.
pub fn finite_diff_check<F>(params: &ParamGroup, epsilon: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &Bound) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "finite-difference step {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let out = f(&mut tape, &bound)?;
    let f0 = tape.scalar(out);
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {f0}")));
    }
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut probe = params.clone();
    for p in params.iter() {
        let analytic = tape.grad_or_zero(bound.var(p.name())?);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = p.value().data()[i];
            probe.get_mut(p.name()).expect("same names").data_mut()[i] = orig + epsilon;
            let plus = evaluate(&probe, &mut f)?;
            probe.get_mut(p.name()).expect("same names").data_mut()[i] = orig - epsilon;
            let minus = evaluate(&probe, &mut f)?;
            probe.get_mut(p.name()).expect("same names").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((p.name().to_string(), i));
            }
        }
    }
    Ok(report)
}
