use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Per-parameter outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// Largest relative error after discounting finite-difference rounding; decides pass/fail.
    pub max_rel_error: f64,
    /// Largest plain relative error `|a − n| / max(|a|, |n|)`.
    pub max_raw_rel_error: f64,
    /// Flat index of the element with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

/// Magnitudes below this are treated as zero when forming relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Rounding error of one loss evaluation, in units of `ε_mach·|L|`.
const LOSS_ROUNDOFF_ULPS: f64 = 16.0;

/// Compares reverse-mode gradients of `loss` against central differences
/// `(L(p + h) − L(p − h)) / 2h` for every element of every unfrozen parameter.
/// The part of each discrepancy within the rounding error of the difference quotient,
/// `16·ε_mach·|L| / h`, is not counted.
pub fn gradient_check<F>(params: &ParamStore, loss: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(step > 0.0 && tolerance > 0.0) {
        return Err(Error::contract("gradient_check needs positive step and tolerance"));
    }
    if params.iter().any(|p| !p.value().all_finite()) {
        return Err(Error::contract("gradient_check needs finite parameters"));
    }
    let mut tape = Tape::new();
    let l = loss(&mut tape, params)?;
    let grads = tape.backward(l)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(&mut tape, store)?;
        tape.value(l).item()
    };

    let mut work = params.clone();
    let mut report = GradCheckReport { params: Vec::new(), tolerance };
    for pi in 0..params.len() {
        let p = params.at(pi);
        if p.is_frozen() {
            continue;
        }
        let mut worst = ParamCheck {
            name: p.name().to_string(),
            max_rel_error: 0.0,
            max_raw_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for e in 0..p.value().len() {
            let orig = p.value().data()[e];
            work.at_mut(pi).value_mut().data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work.at_mut(pi).value_mut().data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work.at_mut(pi).value_mut().data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(p.name()).map_or(0.0, |g| g.data()[e]);
            // A central difference cannot resolve changes below the rounding error of its two losses.
            let noise = LOSS_ROUNDOFF_ULPS * f64::EPSILON * plus.abs().max(minus.abs()) / step;
            let excess = ((analytic - numeric).abs() - noise).max(0.0);
            let err = excess / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst.max_raw_rel_error = worst.max_raw_rel_error.max(relative_error(analytic, numeric));
            if err > worst.max_rel_error || e == 0 {
                worst = ParamCheck { max_rel_error: err, worst_index: e, analytic, numeric, ..worst };
            }
        }
        report.params.push(worst);
    }
    Ok(report)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < REL_ERROR_FLOOR {
        (a - b).abs() / REL_ERROR_FLOOR
    } else {
        (a - b).abs() / denom
    }
}
