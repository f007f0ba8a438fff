//! Tail lower-bound lemmas instantiated on a computed density, envelope fits
//! for both tails and finite-`x` proxies of the limsup quantities.

use serde::Serialize;

use crate::density::{DensityGrid, NormProfile, Side};
use crate::error::{Error, Result};
use crate::toll::{left_step, toll, GAMMA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    /// `m_{ka} >= 2 eps^3 m_{(k-1)a}^2`
    LeftRecurrence,
    /// `m_{ka} >= (2 eps^3 m_{2a})^{2^{k-2}}`
    LeftIterated,
    /// `f(z + b) >= c delta m_z`
    RightStep,
    /// `m_{2+kb} >= c delta m_{2+(k-1)b}`
    RightChain,
    /// `m_{2+kb} >= (c delta)^{k-1} m_3`
    RightIterated,
}

impl LemmaId {
    pub fn as_str(&self) -> &'static str {
        match self {
            LemmaId::LeftRecurrence => "left_recurrence",
            LemmaId::LeftIterated => "left_iterated",
            LemmaId::RightStep => "right_step",
            LemmaId::RightChain => "right_chain",
            LemmaId::RightIterated => "right_iterated",
        }
    }
}

/// One instantiated inequality `lhs >= rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma_id: LemmaId,
    #[serde(serialize_with = "params_as_map")]
    pub parameters: Vec<(String, f64)>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

fn params_as_map<S: serde::Serializer>(params: &[(String, f64)], s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(params.iter().map(|(k, v)| (k, v)))
}

impl LemmaReport {
    pub fn new(lemma_id: LemmaId, parameters: &[(&str, f64)], lhs: f64, rhs: f64) -> Self {
        LemmaReport {
            lemma_id,
            parameters: parameters
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            lhs,
            rhs,
            margin: lhs - rhs,
            pass: lhs >= rhs,
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.parameters
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }
}

/// Left-tail recurrence with `a = -g(1/2 - eps)`: the one-step form for
/// `k = 3..=k_max` and the iterated form for `k = 2..=k_max`.
pub fn verify_left_lemma(grid: &DensityGrid, eps: f64, k_max: usize) -> Result<Vec<LemmaReport>> {
    if !(eps > 0.0 && eps < 0.1) {
        return Err(Error::domain(format!("eps = {eps} outside (0, 1/10)")));
    }
    if k_max < 2 {
        return Err(Error::domain("k_max must be at least 2"));
    }
    let a = left_step(eps)?;
    let reach = -grid.x_min();
    let feasible = (reach / a).floor() as usize;
    if k_max > feasible {
        return Err(Error::domain(format!(
            "k_max = {k_max} needs the grid to reach -{}; max feasible k is {feasible}",
            k_max as f64 * a
        )));
    }
    let m = |j: usize| grid.tail_min(Side::Left, j as f64 * a);
    let c = 2.0 * eps.powi(3);
    let m2 = m(2)?;
    let mut out = Vec::new();
    for k in 2..=k_max {
        let mk = m(k)?;
        let params = [("eps", eps), ("a", a), ("k", k as f64)];
        if k >= 3 {
            let prev = m(k - 1)?;
            out.push(LemmaReport::new(
                LemmaId::LeftRecurrence,
                &params,
                mk,
                c * prev * prev,
            ));
        }
        let rhs = (c * m2).powf(2f64.powi(k as i32 - 2));
        out.push(LemmaReport::new(LemmaId::LeftIterated, &params, mk, rhs));
    }
    Ok(out)
}

/// `c = 2 [F(1) - F(0)]`.
pub fn right_constant(grid: &DensityGrid) -> f64 {
    2.0 * (grid.cdf(1.0) - grid.cdf(0.0))
}

/// Right-tail lemmas: the step lemma at each `z` in `step_zs`, the chain for
/// `k = 2..=k_max` and the iterated form for `k = 1..=k_max`.
pub fn verify_right_lemmas(
    grid: &DensityGrid,
    b: f64,
    delta: f64,
    k_max: usize,
    step_zs: &[f64],
) -> Result<Vec<LemmaReport>> {
    if !(0.0..1.0).contains(&b) {
        return Err(Error::domain(format!("b = {b} outside [0, 1)")));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::domain(format!("delta = {delta} outside (0, 1/2)")));
    }
    if k_max < 1 {
        return Err(Error::domain("k_max must be at least 1"));
    }
    let gd = toll(delta)?;
    if gd < b {
        return Err(Error::domain(format!("g(delta) = {gd} < b = {b}")));
    }
    let z_cap = (gd - b) / delta;
    if 2.0 + (k_max as f64 - 1.0) * b > z_cap {
        return Err(Error::domain(format!(
            "2 + (k_max - 1) b = {} exceeds (g(delta) - b)/delta = {z_cap}",
            2.0 + (k_max as f64 - 1.0) * b
        )));
    }
    let top = 2.0 + k_max as f64 * b;
    if top.max(3.0) > grid.x_max() {
        return Err(Error::domain(format!(
            "grid reach {} < {}",
            grid.x_max(),
            top.max(3.0)
        )));
    }
    let c = right_constant(grid);
    let cd = c * delta;
    let m = |z: f64| grid.tail_min(Side::Right, z);
    let mut out = Vec::new();
    for &z in step_zs {
        if z < 2.0 || z > z_cap {
            return Err(Error::domain(format!(
                "step point z = {z} outside [2, {z_cap}]"
            )));
        }
        if z + b > grid.x_max() {
            return Err(Error::domain(format!("z + b = {} beyond the grid", z + b)));
        }
        let params = [("b", b), ("delta", delta), ("c", c), ("z", z)];
        out.push(LemmaReport::new(
            LemmaId::RightStep,
            &params,
            grid.value_at(z + b),
            cd * m(z)?,
        ));
    }
    let m3 = m(3.0)?;
    for k in 1..=k_max {
        let kf = k as f64;
        let lhs = m(2.0 + kf * b)?;
        let params = [("b", b), ("delta", delta), ("c", c), ("k", kf)];
        if k >= 2 {
            let prev = m(2.0 + (kf - 1.0) * b)?;
            out.push(LemmaReport::new(
                LemmaId::RightChain,
                &params,
                lhs,
                cd * prev,
            ));
        }
        out.push(LemmaReport::new(
            LemmaId::RightIterated,
            &params,
            lhs,
            cd.powi(k as i32 - 1) * m3,
        ));
    }
    Ok(out)
}

/// Least-squares line `y = slope x + intercept` with its coefficient of
/// determination.
fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeftFit {
    pub window: (f64, f64),
    pub slope: f64,
    /// Desk-scale surrogate only; not an estimate of any limiting constant.
    pub intercept: f64,
    pub r2: f64,
    pub points: Vec<(f64, f64)>,
}

/// Minimum number of grid nodes for a tail fit.
pub const MIN_FIT_NODES: usize = 8;

/// Fit of `ln(-ln f(-x))` against `x` over grid nodes with `-x` in the grid
/// and `x` in the window.
pub fn left_envelope_fit(grid: &DensityGrid, window: (f64, f64)) -> Result<LeftFit> {
    let (lo, hi) = window;
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::domain(format!("bad left window ({lo}, {hi})")));
    }
    let mut points: Vec<(f64, f64)> = grid
        .nodes()
        .zip(grid.log_values())
        .filter(|(x, l)| -x >= lo && -x <= hi && l.is_finite() && **l < 0.0)
        .map(|(x, l)| (-x, (-l).ln()))
        .collect();
    points.reverse();
    if points.len() < MIN_FIT_NODES {
        return Err(Error::InsufficientWindow(format!(
            "{} usable left-tail nodes in [{lo}, {hi}], need {MIN_FIT_NODES}",
            points.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().cloned().unzip();
    let (slope, intercept, r2) = line_fit(&xs, &ys);
    Ok(LeftFit {
        window,
        slope,
        intercept,
        r2,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RightProfile {
    pub window: (f64, f64),
    /// `(x, -ln f(x) / (x ln x))`
    pub ratios: Vec<(f64, f64)>,
    /// Smallest `C >= 0` with every ratio in
    /// `[1 - C/ln x, 1 + ln ln x/ln x + C/ln x]`.
    pub band_c: f64,
}

impl RightProfile {
    pub fn ratio_at(&self, x: f64) -> Option<f64> {
        self.ratios
            .iter()
            .min_by(|a, b| (a.0 - x).abs().total_cmp(&(b.0 - x).abs()))
            .map(|p| p.1)
    }

    pub fn band(x: f64, c: f64) -> (f64, f64) {
        let l = x.ln();
        (1.0 - c / l, 1.0 + l.ln() / l + c / l)
    }

    pub fn contained(&self, c: f64) -> bool {
        self.ratios.iter().all(|&(x, r)| {
            let (lo, hi) = Self::band(x, c);
            r >= lo && r <= hi
        })
    }
}

pub fn right_envelope_fit(grid: &DensityGrid, window: (f64, f64)) -> Result<RightProfile> {
    let (lo, hi) = window;
    if !(lo >= std::f64::consts::E && hi > lo) {
        return Err(Error::domain(format!(
            "right window ({lo}, {hi}) must start at x >= e"
        )));
    }
    let ratios: Vec<(f64, f64)> = grid
        .nodes()
        .zip(grid.log_values())
        .filter(|(x, l)| *x >= lo && *x <= hi && l.is_finite())
        .map(|(x, l)| (x, -l / (x * x.ln())))
        .collect();
    if ratios.len() < MIN_FIT_NODES {
        return Err(Error::InsufficientWindow(format!(
            "{} usable right-tail nodes in [{lo}, {hi}], need {MIN_FIT_NODES}",
            ratios.len()
        )));
    }
    let band_c = ratios
        .iter()
        .map(|&(x, r)| {
            let l = x.ln();
            ((1.0 - r) * l).max((r - 1.0 - l.ln() / l) * l)
        })
        .fold(0.0, f64::max);
    Ok(RightProfile {
        window,
        ratios,
        band_c,
    })
}

/// Shrinks a tail window to the nodes where the fine and coarse solutions
/// agree to relative accuracy `max_rel`, walking outward from the inner end
/// and stopping at the first disagreement.
pub fn trusted_window(
    fine: &DensityGrid,
    coarse: &DensityGrid,
    side: Side,
    window: (f64, f64),
    max_rel: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = window;
    let mut last_ok = None;
    let tail_points: Vec<f64> = fine
        .nodes()
        .filter_map(|x| {
            let t = match side {
                Side::Left => -x,
                Side::Right => x,
            };
            (t >= lo && t <= hi).then_some(t)
        })
        .collect();
    let mut ts = tail_points;
    ts.sort_by(f64::total_cmp);
    for t in ts {
        let x = match side {
            Side::Left => -t,
            Side::Right => t,
        };
        if !coarse.contains(x) {
            break;
        }
        let rel = (fine.log_value_at(x) - coarse.log_value_at(x))
            .exp_m1()
            .abs();
        if !(rel < max_rel) {
            break;
        }
        last_ok = Some(t);
    }
    match last_ok {
        Some(t) if t > lo => Ok((lo, t)),
        _ => Err(Error::InsufficientWindow(format!(
            "no {side} tail nodes in [{lo}, {hi}] agree to {max_rel} between resolutions"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Lower,
    Upper,
}

/// Envelope of one tail with its surrogate constant:
///
/// * left lower: `f(-x) >= exp[-e^{γx + ln ln x + offset}]`
/// * left upper: `f(-x) <= exp[-e^{γx + offset}]`
/// * right lower: `f(x) >= exp[-x ln x - x ln ln x + offset x]`
/// * right upper: `f(x) <= exp[-x ln x + offset x]`
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailEnvelope {
    pub side: Side,
    pub kind: Bound,
    pub offset: f64,
}

impl TailEnvelope {
    /// `ln(-ln envelope)` on the left, `-ln envelope` on the right; finite for
    /// `x > 1` at any magnitude short of `f64::MAX`.
    pub fn transformed(&self, x: f64) -> f64 {
        let ll = x.ln().ln();
        match (self.side, self.kind) {
            (Side::Left, Bound::Lower) => GAMMA * x + ll + self.offset,
            (Side::Left, Bound::Upper) => GAMMA * x + self.offset,
            (Side::Right, Bound::Lower) => x * x.ln() + x * ll - self.offset * x,
            (Side::Right, Bound::Upper) => x * x.ln() - self.offset * x,
        }
    }

    /// Whether `ln f(∓x)` lies on the correct side of the envelope.
    pub fn holds(&self, x: f64, log_f: f64) -> bool {
        let env = self.transformed(x);
        match (self.side, self.kind) {
            (Side::Left, Bound::Lower) => (-log_f).ln() <= env,
            (Side::Left, Bound::Upper) => (-log_f).ln() >= env,
            (Side::Right, Bound::Lower) => -log_f <= env,
            (Side::Right, Bound::Upper) => -log_f >= env,
        }
    }
}

/// Tightest offsets for the four envelopes over tail nodes in the windows
/// (nodes with `x <= 1` are skipped where `ln ln x` is undefined).
pub fn fit_envelopes(
    grid: &DensityGrid,
    left_window: (f64, f64),
    right_window: (f64, f64),
) -> Result<Vec<TailEnvelope>> {
    let left = left_envelope_fit(grid, left_window)?;
    let right = right_envelope_fit(grid, right_window)?;
    let mut lower_l = f64::NEG_INFINITY;
    let mut upper_l = f64::INFINITY;
    for &(x, y) in &left.points {
        upper_l = upper_l.min(y - GAMMA * x);
        if x > 1.0 {
            lower_l = lower_l.max(y - GAMMA * x - x.ln().ln());
        }
    }
    let mut lower_r = f64::INFINITY;
    let mut upper_r = f64::NEG_INFINITY;
    for &(x, r) in &right.ratios {
        let neg_log = r * x * x.ln();
        lower_r = lower_r.min((x * x.ln() + x * x.ln().ln() - neg_log) / x);
        upper_r = upper_r.max((x * x.ln() - neg_log) / x);
    }
    let mut out = vec![TailEnvelope {
        side: Side::Left,
        kind: Bound::Upper,
        offset: upper_l,
    }];
    if lower_l.is_finite() {
        out.push(TailEnvelope {
            side: Side::Left,
            kind: Bound::Lower,
            offset: lower_l,
        });
    }
    out.push(TailEnvelope {
        side: Side::Right,
        kind: Bound::Lower,
        offset: lower_r,
    });
    out.push(TailEnvelope {
        side: Side::Right,
        kind: Bound::Upper,
        offset: upper_r,
    });
    Ok(out)
}

/// One row of the finite-`x` limsup proxies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProxyRow {
    pub side: Side,
    pub k: usize,
    pub x: f64,
    /// `γx - ln(-ln ||Fu^(k)||_x)` (left) or `(x ln x + ln ||F̄^(k)||_x)/x` (right).
    pub value: Option<f64>,
    /// Increment towards order `k + 1`: `-ln(-ln N_{k+1}) + ln(-ln N_k)` on the
    /// left, `(ln N_{k+1} - ln N_k)/x` on the right.
    pub diff: Option<f64>,
}

fn proxy_value(side: Side, x: f64, norm: f64) -> Option<f64> {
    if !(norm > 0.0 && norm < 1.0) {
        return None;
    }
    match side {
        Side::Left => Some(GAMMA * x - (-norm.ln()).ln()),
        Side::Right if x > 0.0 => Some((x * x.ln() + norm.ln()) / x),
        Side::Right => None,
    }
}

fn proxy_diff(side: Side, x: f64, lower: f64, upper: f64) -> Option<f64> {
    let ok = |n: f64| n > 0.0 && n < 1.0;
    if !(ok(lower) && ok(upper)) {
        return None;
    }
    match side {
        Side::Left => Some(-(-upper.ln()).ln() + (-lower.ln()).ln()),
        Side::Right if x > 0.0 => Some((upper.ln() - lower.ln()) / x),
        Side::Right => None,
    }
}

/// Proxies for every profile; profiles of one side must share their `xs`.
/// Points with a norm of 0 or at least 1 carry `None`.
pub fn limsup_proxies(profiles: &[NormProfile]) -> Result<Vec<ProxyRow>> {
    let mut rows = Vec::new();
    for p in profiles {
        if p.xs.len() != p.norms.len() {
            return Err(Error::Shape("profile xs and norms differ in length".into()));
        }
        let next = profiles.iter().find(|q| q.side == p.side && q.k == p.k + 1);
        if let Some(q) = next {
            if q.xs != p.xs {
                return Err(Error::Shape(format!(
                    "{} profiles k = {} and k = {} use different x sets",
                    p.side, p.k, q.k
                )));
            }
        }
        for (i, (&x, &n)) in p.xs.iter().zip(&p.norms).enumerate() {
            rows.push(ProxyRow {
                side: p.side,
                k: p.k,
                x,
                value: proxy_value(p.side, x, n),
                diff: next.and_then(|q| proxy_diff(p.side, x, n, q.norms[i])),
            });
        }
    }
    Ok(rows)
}

/// Width `max - min` of the defined proxy values for one side and order.
pub fn proxy_band_width(rows: &[ProxyRow], side: Side, k: usize) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.side == side && r.k == k)
        .filter_map(|r| r.value)
        .collect();
    if vals.is_empty() {
        return None;
    }
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Planted density: `exp(-e^{γ|x|})` on the left, `exp(-x ln x)` on the
    /// right of 1, glued smoothly enough for the fits.
    fn planted() -> DensityGrid {
        DensityGrid::from_log_fn(-3.0, 14.0, 3401, |x| {
            if x < 0.0 {
                -(GAMMA * -x).exp()
            } else if x > 1.0 {
                -x * x.ln()
            } else {
                -1.0
            }
        })
        .unwrap()
    }

    #[test]
    fn report_pass_is_lhs_ge_rhs() {
        let r = LemmaReport::new(LemmaId::RightStep, &[("z", 2.0)], 1.0, 1.0);
        assert!(r.pass);
        assert_eq!(r.margin, 0.0);
        let r = LemmaReport::new(LemmaId::RightStep, &[("z", 2.0)], 0.5, 1.0);
        assert!(!r.pass);
        assert_eq!(r.param("z"), Some(2.0));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"right_step\""));
        assert!(json.contains("\"parameters\":{\"z\":2.0}"), "{json}");
    }

    #[test]
    fn planted_left_slope() {
        let fit = left_envelope_fit(&planted(), (0.5, 2.5)).unwrap();
        assert_abs_diff_eq!(fit.slope, GAMMA, epsilon = 1e-3);
        assert_abs_diff_eq!(fit.intercept, 0.0, epsilon = 1e-9);
        assert!(fit.r2 > 0.999_999);
    }

    #[test]
    fn planted_right_ratio() {
        let p = right_envelope_fit(&planted(), (3.0, 13.0)).unwrap();
        for &(_, r) in &p.ratios {
            assert_abs_diff_eq!(r, 1.0, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(p.band_c, 0.0, epsilon = 1e-6);
        assert!(p.contained(p.band_c));
    }

    #[test]
    fn windows_validated() {
        let g = planted();
        assert!(right_envelope_fit(&g, (2.0, 10.0)).is_err());
        assert!(matches!(
            left_envelope_fit(&g, (1.0, 1.01)),
            Err(Error::InsufficientWindow(_))
        ));
    }

    #[test]
    fn planted_proxies_vanish() {
        let xs: Vec<f64> = (1..20).map(|i| 0.1 * i as f64).collect();
        let left = NormProfile {
            k: 0,
            side: Side::Left,
            xs: xs.clone(),
            norms: xs.iter().map(|x| (-(GAMMA * x).exp()).exp()).collect(),
        };
        let rx: Vec<f64> = (3..30).map(|i| 0.5 * i as f64).collect();
        let right = NormProfile {
            k: 0,
            side: Side::Right,
            xs: rx.clone(),
            norms: rx.iter().map(|x| (-x * x.ln()).exp()).collect(),
        };
        let rows = limsup_proxies(&[left, right]).unwrap();
        for r in &rows {
            assert_abs_diff_eq!(r.value.unwrap(), 0.0, epsilon = 1e-12);
            assert!(r.diff.is_none());
        }
    }

    #[test]
    fn proxies_flag_degenerate_norms() {
        let p = NormProfile {
            k: 0,
            side: Side::Left,
            xs: vec![0.0, 1.0],
            norms: vec![1.0, 0.0],
        };
        let rows = limsup_proxies(&[p]).unwrap();
        assert!(rows.iter().all(|r| r.value.is_none()));
        let a = NormProfile {
            k: 0,
            side: Side::Right,
            xs: vec![1.0],
            norms: vec![0.5],
        };
        let b = NormProfile {
            k: 1,
            side: Side::Right,
            xs: vec![2.0],
            norms: vec![0.5],
        };
        assert!(matches!(limsup_proxies(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn envelopes_hold_on_planted_model() {
        let g = planted();
        let envs = fit_envelopes(&g, (0.5, 2.5), (3.0, 13.0)).unwrap();
        assert_eq!(envs.len(), 4);
        for e in &envs {
            let (lo, hi) = match e.side {
                Side::Left => (1.1, 2.5),
                Side::Right => (3.0, 13.0),
            };
            for i in 0..=20 {
                let x = lo + (hi - lo) * i as f64 / 20.0;
                let lf = match e.side {
                    Side::Left => g.log_value_at(-x),
                    Side::Right => g.log_value_at(x),
                };
                assert!(
                    e.holds(x, lf + if e.kind == Bound::Lower { 1e-9 } else { -1e-9 }),
                    "{e:?} at {x}"
                );
            }
            assert!(e.transformed(1e300).is_finite() || e.side == Side::Right);
        }
    }

    #[test]
    fn lemma_preconditions() {
        let g = planted();
        assert!(verify_left_lemma(&g, 0.1, 3).is_err());
        let err = verify_left_lemma(&g, 0.05, 9).unwrap_err().to_string();
        assert!(err.contains("max feasible k is 7"), "{err}");
        assert!(verify_right_lemmas(&g, 1.0, 0.02, 2, &[]).is_err());
        assert!(verify_right_lemmas(&g, 0.5, 0.5, 2, &[]).is_err());
        // g(0.3) = 0.18 < b
        assert!(verify_right_lemmas(&g, 0.5, 0.3, 2, &[]).is_err());
        // (g(0.02) - 0.5) / 0.02 = 15.2 caps k
        assert!(verify_right_lemmas(&g, 0.5, 0.02, 28, &[]).is_err());
        assert!(verify_right_lemmas(&g, 0.5, 0.02, 4, &[1.5]).is_err());
    }

    #[test]
    fn trivial_lemma_instances() {
        // k = 2 left iterated and k = 1 right iterated hold on any density
        let g = planted();
        let left = verify_left_lemma(&g, 0.05, 2).unwrap();
        assert_eq!(left.len(), 1);
        assert!(left[0].pass);
        let right = verify_right_lemmas(&g, 0.5, 0.02, 1, &[]).unwrap();
        assert_eq!(right.len(), 1);
        assert_eq!(right[0].lemma_id, LemmaId::RightIterated);
        assert!(right[0].pass);
    }

    #[test]
    fn trusted_window_stops_at_disagreement() {
        let fine = planted();
        let coarse = DensityGrid::from_log_fn(-3.0, 14.0, 851, |x| {
            let base = fine.log_value_at(x);
            if x < -2.0 {
                base + 0.5
            } else {
                base
            }
        })
        .unwrap();
        let (lo, hi) = trusted_window(&fine, &coarse, Side::Left, (0.5, 2.8), 0.1).unwrap();
        assert_eq!(lo, 0.5);
        assert_abs_diff_eq!(hi, 2.0, epsilon = 1e-9);
    }
}
