//! Central finite-difference oracle for analytic gradients.

use super::tensor::Param;

/// Gradients with magnitude below this are compared absolutely (relative
/// error is measured against `max(|analytic|, |numeric|, SCALE_FLOOR)`).
pub const SCALE_FLOOR: f64 = 1e-3;

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tol
    }
}

/// Compares each `params[i].grad` (already populated by the caller's analytic
/// backward) against central differences of `f` over `params[i].value`.
/// Values are restored bit-exactly after each probe.
pub fn finite_diff_check(
    mut f: impl FnMut(&[Param]) -> f64,
    params: &mut [Param],
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut check = ParamCheck {
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..params[pi].len() {
            let orig = params[pi].value.data()[i];
            params[pi].value.data_mut()[i] = orig + h;
            let plus = f(params);
            params[pi].value.data_mut()[i] = orig - h;
            let minus = f(params);
            params[pi].value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = params[pi].grad.data()[i];
            let err = relative_error(analytic, numeric);
            if err > check.max_rel_err || i == 0 {
                check = ParamCheck {
                    max_rel_err: err,
                    worst_index: i,
                    analytic,
                    numeric,
                };
            }
        }
        out.push(check);
    }
    GradCheckReport { params: out, tol }
}
