//! The toll function `g`, the limit constants, and the elementary inequalities
//! the tail arguments lean on.

use std::f64::consts::{LN_2, PI};

use serde::Serialize;

use crate::error::{Error, Result};

/// Left-tail rate `(2 - 1/ln 2)^{-1}`.
pub const GAMMA: f64 = 1.0 / (2.0 - 1.0 / LN_2);

/// `Var Z = 7 - 2 pi^2 / 3`.
pub const VAR_Z: f64 = 7.0 - 2.0 * PI * PI / 3.0;

/// Minimum of `g`, attained at `u = 1/2`.
pub const TOLL_MIN: f64 = 1.0 - 2.0 * LN_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Constants {
    pub gamma: f64,
    pub ln2_inv: f64,
    pub var_z: f64,
}

impl Constants {
    pub fn new() -> Self {
        Constants {
            gamma: GAMMA,
            ln2_inv: 1.0 / LN_2,
            var_z: VAR_Z,
        }
    }
}

impl Default for Constants {
    fn default() -> Self {
        Self::new()
    }
}

/// `g(u) = 2u ln u + 2(1-u) ln(1-u) + 1` on the open unit interval.
///
/// The endpoint limits (both equal to 1) are deliberately not served.
pub fn toll(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("g(u) needs 0 < u < 1, got {u}")));
    }
    Ok(toll_interior(u))
}

#[inline]
pub(crate) fn toll_interior(u: f64) -> f64 {
    let v = 1.0 - u;
    2.0 * u * u.ln() + 2.0 * v * v.ln() + 1.0
}

/// `a(eps) = -g(1/2 - eps)`, the left-tail step length.
pub fn left_step(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::domain(format!(
            "a(eps) needs 0 < eps < 1/2, got {eps}"
        )));
    }
    Ok(-toll_interior(0.5 - eps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityKind {
    /// `g(delta) >= 1 + 3 delta ln delta`
    TollLogLower,
    /// `(2 eps / (1 - eps)) |2 ln(1 - 4 eps / (1 + 2 eps))| <= 19 eps^2`
    ShiftUpper,
    /// `a(eps) >= 30 eps^2`
    StepLower,
    /// `(-a(eps) - g(u)) / (1 - u) >= eps^2` for `u` in `[1/2 - eps/2, 1/2]`
    SlopeLower,
}

/// One pointwise instance of an elementary inequality, written as `lhs >= rhs`.
#[derive(Clone, Debug, Serialize)]
pub struct ElementaryCheck {
    pub kind: InequalityKind,
    pub param: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl ElementaryCheck {
    fn new(kind: InequalityKind, param: f64, lhs: f64, rhs: f64) -> Self {
        ElementaryCheck {
            kind,
            param,
            lhs,
            rhs,
            pass: lhs >= rhs,
        }
    }
}

/// Points sampled in `[1/2 - eps/2, 1/2]` for the slope check.
const SLOPE_SAMPLES: usize = 33;

pub fn check_elementary_inequalities(
    eps_grid: &[f64],
    delta_grid: &[f64],
) -> Result<Vec<ElementaryCheck>> {
    if let Some(&e) = eps_grid.iter().find(|&&e| !(e > 0.0 && e < 0.1)) {
        return Err(Error::domain(format!("eps must lie in (0, 1/10), got {e}")));
    }
    if let Some(&d) = delta_grid.iter().find(|&&d| !(d > 0.0 && d < 0.5)) {
        return Err(Error::domain(format!(
            "delta must lie in (0, 1/2), got {d}"
        )));
    }

    let mut out = Vec::with_capacity(delta_grid.len() + 3 * eps_grid.len());
    for &d in delta_grid {
        out.push(ElementaryCheck::new(
            InequalityKind::TollLogLower,
            d,
            toll_interior(d),
            1.0 + 3.0 * d * d.ln(),
        ));
    }
    for &e in eps_grid {
        let shift = (2.0 * e / (1.0 - e)) * (2.0 * (1.0 - 4.0 * e / (1.0 + 2.0 * e)).ln()).abs();
        // stored as lhs >= rhs
        out.push(ElementaryCheck::new(
            InequalityKind::ShiftUpper,
            e,
            19.0 * e * e,
            shift,
        ));

        let a = -toll_interior(0.5 - e);
        out.push(ElementaryCheck::new(
            InequalityKind::StepLower,
            e,
            a,
            30.0 * e * e,
        ));

        let worst = (0..SLOPE_SAMPLES)
            .map(|i| {
                let u = 0.5 - 0.5 * e * (1.0 - i as f64 / (SLOPE_SAMPLES - 1) as f64);
                (-a - toll_interior(u)) / (1.0 - u)
            })
            .fold(f64::INFINITY, f64::min);
        out.push(ElementaryCheck::new(
            InequalityKind::SlopeLower,
            e,
            worst,
            e * e,
        ));
    }
    Ok(out)
}
