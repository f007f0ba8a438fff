//! Fixed-point iteration of the integral equation for the limit density.
//!
//! With `w` the grid variable and `u` folded onto `(0, 1/2]`, one application
//! of the operator reads
//!
//! ```text
//! (T f)(x) = 2 ∫_0^{1/2} du/(1-u) ∫ f(w) f((x - g(u) - u w)/(1-u)) dw.
//! ```
//!
//! This is the usual form `∫∫ f(z) f((x - g(u) - (1-u) z)/u) dz du/u` after
//! the change of variables `w = (x - g(u) - (1-u) z)/u`. The interpolated
//! argument then moves at most one grid cell per `w` step, so interpolation
//! never has to resolve a stretched copy of `f`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DensityGrid, GridMeta};
use crate::error::{Error, Result};
use crate::quadrature::{toll_breakpoints, Neumaier, PanelRule};
use crate::toll::{toll_interior, VAR_Z};

/// Upper limit on inner-loop terms per operator application.
pub const TERM_BUDGET: f64 = 2e11;

/// The `w` sum runs over every `W_STRIDE`-th grid node. The integrand is
/// smooth on scales much wider than the grid spacing, and the trapezoid rule
/// converges fast on it; the interpolated factor still uses every node.
pub const W_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Init {
    /// Normal with mean 0 and variance `7 - 2π²/3`.
    Gaussian,
    /// Uniform over the whole grid domain.
    Uniform,
    File(PathBuf),
}

impl TryFrom<String> for Init {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "gaussian" => Ok(Init::Gaussian),
            "uniform" => Ok(Init::Uniform),
            "" => Err("empty init".into()),
            path => Ok(Init::File(PathBuf::from(path))),
        }
    }
}

impl From<Init> for String {
    fn from(i: Init) -> String {
        match i {
            Init::Gaussian => "gaussian".into(),
            Init::Uniform => "uniform".into(),
            Init::File(p) => p.to_string_lossy().into_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub domain: (f64, f64),
    pub n_points: usize,
    pub u_panels: usize,
    pub u_order: usize,
    pub tol_l1: f64,
    pub max_iter: usize,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            domain: (-2.5, 12.0),
            n_points: 4097,
            u_panels: 14,
            u_order: 5,
            tol_l1: 1e-6,
            max_iter: 200,
            init: Init::Gaussian,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && a < 0.0 && b > 0.0) {
            return Err(Error::Config(format!(
                "domain ({a}, {b}) must be finite and straddle 0"
            )));
        }
        if self.n_points < 16 {
            return Err(Error::Config(format!(
                "n_points = {} is too small",
                self.n_points
            )));
        }
        if self.u_panels < 4 {
            return Err(Error::Config(format!("u_panels = {} < 4", self.u_panels)));
        }
        if self.u_order == 0 || self.u_order > 64 {
            return Err(Error::Config(format!(
                "u_order = {} out of range",
                self.u_order
            )));
        }
        if !(self.tol_l1 > 0.0) {
            return Err(Error::Config("tol_l1 must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SolverConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn u_rule(&self) -> Result<PanelRule> {
        PanelRule::new(&toll_breakpoints(self.u_panels)?, self.u_order)
    }

    pub fn spacing(&self) -> f64 {
        (self.domain.1 - self.domain.0) / (self.n_points - 1) as f64
    }

    /// The starting density, normalized on the configured grid.
    pub fn initial_grid(&self) -> Result<DensityGrid> {
        self.validate()?;
        let (a, b) = self.domain;
        let n = self.n_points;
        let grid = match &self.init {
            Init::Gaussian => {
                let c = -0.5 * (2.0 * std::f64::consts::PI * VAR_Z).ln();
                DensityGrid::from_log_fn(a, b, n, |x| c - x * x / (2.0 * VAR_Z))?
            }
            Init::Uniform => DensityGrid::from_values(a, b, vec![1.0 / (b - a); n])?,
            Init::File(path) => {
                let file = std::fs::File::open(path)?;
                let loaded = DensityGrid::read_binary(std::io::BufReader::new(file))?;
                if loaded.x_min() == a && loaded.x_max() == b && loaded.n_points() == n {
                    loaded
                } else {
                    DensityGrid::from_log_fn(a, b, n, |x| loaded.log_value_at(x))?
                }
            }
        };
        normalize(&grid)
    }
}

/// L1 distance by the trapezoid rule.
pub fn residual(f1: &DensityGrid, f2: &DensityGrid) -> Result<f64> {
    if !f1.same_geometry(f2) {
        return Err(Error::Shape(format!(
            "grids [{}, {}; {}] and [{}, {}; {}] differ",
            f1.x_min(),
            f1.x_max(),
            f1.n_points(),
            f2.x_min(),
            f2.x_max(),
            f2.n_points()
        )));
    }
    let h = f1.spacing();
    let n = f1.n_points();
    let mut acc = Neumaier::default();
    for (i, (a, b)) in f1.values().iter().zip(f2.values()).enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
        acc.add(w * (a - b).abs());
    }
    Ok(acc.sum())
}

fn normalize(grid: &DensityGrid) -> Result<DensityGrid> {
    let mass = grid.total_mass();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Numerical {
            x: f64::NAN,
            u: f64::NAN,
            reason: format!("cannot normalize a grid of mass {mass}"),
        });
    }
    let shift = mass.ln();
    let logs = grid.log_values().iter().map(|l| l - shift).collect();
    Ok(DensityGrid::from_log_values(grid.x_min(), grid.x_max(), logs)?.with_meta(grid.meta))
}

/// Precomputed per-cell data for interpolating `ln f`.
struct Tables {
    x_min: f64,
    h: f64,
    n: usize,
    stride: usize,
    // trapezoid weight on the w lattice (zero off the lattice) and its log
    // added to ln f
    wt: Vec<f64>,
    lw: Vec<f64>,
    log: Vec<f64>,
    slope: Vec<f64>,
    // false where a cell touches a zero value; those use value-space interpolation
    log_ok: Vec<bool>,
    all_log_ok: bool,
    steep: Vec<bool>,
    values: Vec<f64>,
}

impl Tables {
    fn new(f: &DensityGrid) -> Self {
        let n = f.n_points();
        let h = f.spacing();
        let log = f.log_values().to_vec();
        let stride = W_STRIDE.min(n - 1);
        let top = (n - 1) / stride * stride;
        let wt: Vec<f64> = (0..n)
            .map(|j| match j {
                _ if j % stride != 0 || j > top => 0.0,
                _ if j == 0 || j == top => 0.5 * stride as f64 * h,
                _ => stride as f64 * h,
            })
            .collect();
        let lw = log.iter().zip(&wt).map(|(l, w)| l + w.ln()).collect();
        let mut slope = vec![0.0; n];
        let mut log_ok = vec![false; n];
        for i in 0..n - 1 {
            log_ok[i] = log[i].is_finite() && log[i + 1].is_finite();
            slope[i] = if log_ok[i] { log[i + 1] - log[i] } else { 0.0 };
        }
        let steep = slope.iter().map(|s| s.abs() > SMALL_STEP).collect();
        Tables {
            x_min: f.x_min(),
            h,
            n,
            stride,
            wt,
            lw,
            log,
            slope,
            all_log_ok: log_ok[..n - 1].iter().all(|&b| b),
            steep,
            log_ok,
            values: f.values().to_vec(),
        }
    }

    /// Lattice nodes of the `w` sum inside `lo..=hi`.
    #[inline]
    fn lattice(&self, lo: usize, hi: usize) -> std::iter::StepBy<std::ops::RangeInclusive<usize>> {
        (lo.div_ceil(self.stride) * self.stride..=hi).step_by(self.stride)
    }

    #[inline(always)]
    fn log_at(&self, pos: f64) -> f64 {
        let i = (pos as usize).min(self.n - 2);
        let t = pos - i as f64;
        if self.log_ok[i] {
            self.log[i] + t * self.slope[i]
        } else {
            ((1.0 - t) * self.values[i] + t * self.values[i + 1]).ln()
        }
    }
}

/// Quadrature node in `u` with everything that does not depend on `w`.
struct UNode {
    u: f64,
    g: f64,
    // 2 * weight / (1 - u) and its log
    weight: f64,
    log_weight: f64,
    ratio: f64,
}

fn u_nodes(cfg: &SolverConfig) -> Result<Vec<UNode>> {
    let rule = cfg.u_rule()?;
    Ok(rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&u, &w)| UNode {
            u,
            g: toll_interior(u),
            weight: 2.0 * w / (1.0 - u),
            log_weight: (2.0 * w / (1.0 - u)).ln(),
            ratio: u / (1.0 - u),
        })
        .collect())
}

/// Valid `w` index range for one `(x, u)` pair, and the grid position of the
/// interpolated argument at `j = 0`.
#[inline]
fn row_span(t: &Tables, x: f64, node: &UNode) -> Option<(usize, usize, f64)> {
    let top = (t.n - 1) as f64;
    // position of z = (x - g - u w_j)/(1-u) is p0 - ratio * j
    let p0 = ((x - node.g) / (1.0 - node.u) - node.ratio * t.x_min - t.x_min) / t.h;
    let hi = (p0 / node.ratio).floor().min(top);
    let lo = ((p0 - top) / node.ratio).ceil().max(0.0);
    if hi < lo {
        return None;
    }
    Some((lo as usize, hi as usize, p0))
}

/// Largest `|ln f(x_{i+1}) - ln f(x_i)|` handled by the series in [`exp_small`].
const SMALL_STEP: f64 = 0.1;

/// `e^y` for `|y| <= 0.1` by its Taylor series through `y^7` (relative error
/// below 3e-13).
#[inline(always)]
fn exp_small(y: f64) -> f64 {
    let mut p = 1.0 / 5040.0;
    p = p * y + 1.0 / 720.0;
    p = p * y + 1.0 / 120.0;
    p = p * y + 1.0 / 24.0;
    p = p * y + 1.0 / 6.0;
    p = p * y + 0.5;
    p = p * y + 1.0;
    p * y + 1.0
}

/// One row with pre-exponentiated factors: `aw[j] = wt_j e^{L_j - s}` on the
/// `w` lattice of the given stride and `az[i] = e^{L_i - s}`, so only the
/// in-cell log-linear factor remains.
#[inline]
fn row_sum_scaled(
    t: &Tables,
    node: &UNode,
    span: (usize, usize, f64),
    aw: &[f64],
    az: &[f64],
) -> f64 {
    let (lo, hi, p0) = span;
    let last = t.n - 2;
    let mut acc = 0.0;
    for j in t.lattice(lo, hi) {
        let pos = (p0 - node.ratio * j as f64).max(0.0);
        let i = (pos as usize).min(last);
        let y = (pos - i as f64) * t.slope[i];
        let e = if t.steep[i] { y.exp() } else { exp_small(y) };
        acc += aw[j] * az[i] * e;
    }
    acc * node.weight
}

/// Shifted sum `Σ exp(y_j - shift)` over the interior `w` sum of one row.
#[inline]
fn row_sum(t: &Tables, node: &UNode, span: (usize, usize, f64), shift: f64) -> f64 {
    let (lo, hi, p0) = span;
    let base = node.log_weight - shift;
    let mut acc = 0.0;
    for j in t.lattice(lo, hi) {
        let pos = (p0 - node.ratio * j as f64).max(0.0);
        acc += (t.lw[j] + t.log_at(pos) + base).exp();
    }
    acc
}

fn row_max(t: &Tables, node: &UNode, span: (usize, usize, f64)) -> f64 {
    let (lo, hi, p0) = span;
    let mut m = f64::NEG_INFINITY;
    for j in t.lattice(lo, hi) {
        let pos = (p0 - node.ratio * j as f64).max(0.0);
        m = m.max(t.lw[j] + t.log_at(pos) + node.log_weight);
    }
    m
}

/// Shifts below this use the direct row sums; the split `e^{L - s/2}` factors
/// would leave the double range.
const SCALED_SHIFT_MIN: f64 = -1300.0;

/// `ln (T f)(x)`, summing rows relative to `guess` and falling back to an exact
/// maximum shift if that under- or overflows.
fn log_t_at(t: &Tables, nodes: &[UNode], x: f64, guess: f64) -> Result<f64> {
    let spans: Vec<_> = nodes.iter().map(|nd| row_span(t, x, nd)).collect();
    let nan_check = |s: f64, nd: &UNode| {
        if s.is_nan() {
            Err(Error::Numerical {
                x,
                u: nd.u,
                reason: "NaN in quadrature row".into(),
            })
        } else {
            Ok(s)
        }
    };
    if t.all_log_ok && guess.is_finite() && guess >= SCALED_SHIFT_MIN {
        let half = 0.5 * guess;
        let az: Vec<f64> = t.log.iter().map(|l| (l - half).exp()).collect();
        let aw: Vec<f64> = az.iter().zip(&t.wt).map(|(a, w)| a * w).collect();
        let mut acc = Neumaier::default();
        for (nd, span) in nodes.iter().zip(&spans) {
            if let Some(span) = span {
                acc.add(nan_check(row_sum_scaled(t, nd, *span, &aw, &az), nd)?);
            }
        }
        let total = acc.sum();
        if total > 1e-200 && total < 1e200 {
            return Ok(guess + total.ln());
        }
    }
    let accumulate = |shift: f64| -> Result<f64> {
        let mut acc = Neumaier::default();
        for (nd, span) in nodes.iter().zip(&spans) {
            if let Some(span) = span {
                acc.add(nan_check(row_sum(t, nd, *span, shift), nd)?);
            }
        }
        Ok(acc.sum())
    };
    let shift = nodes
        .iter()
        .zip(&spans)
        .filter_map(|(nd, span)| span.map(|s| row_max(t, nd, s)))
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(shift + accumulate(shift)?.ln())
}

/// Operator output before renormalization, as log values on the input grid.
fn apply_raw(fin: &DensityGrid, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let nodes = u_nodes(cfg)?;
    let n = fin.n_points();
    let terms = (n as f64) * (n as f64) * nodes.len() as f64;
    if terms > TERM_BUDGET {
        return Err(Error::Resource(format!(
            "{terms:e} quadrature terms per application exceed the budget {TERM_BUDGET:e}"
        )));
    }
    let t = Tables::new(fin);
    let guesses = fin.log_values();
    (0..n)
        .into_par_iter()
        .map(|i| log_t_at(&t, &nodes, fin.node(i), guesses[i]))
        .collect()
}

/// One application of the operator, renormalized to unit mass. The pre-
/// normalization mass defect is stored in `meta.normalization_defect`.
pub fn apply_t(fin: &DensityGrid, cfg: &SolverConfig) -> Result<DensityGrid> {
    let logs = apply_raw(fin, cfg)?;
    let h = fin.spacing();
    let n = fin.n_points();
    for (i, l) in logs.iter().enumerate() {
        if *l == f64::NEG_INFINITY && i > 0 && i < n - 1 {
            return Err(Error::Numerical {
                x: fin.node(i),
                u: f64::NAN,
                reason: "operator output vanished at an interior node".into(),
            });
        }
    }
    let raw = DensityGrid::from_log_values(fin.x_min(), fin.x_max(), logs)?;
    let defect = raw.total_mass() - 1.0;
    debug_assert!(h > 0.0);
    let mut out = normalize(&raw)?;
    out.meta = GridMeta {
        iterations: fin.meta.iterations,
        residual: fin.meta.residual,
        normalization_defect: defect,
    };
    Ok(out)
}

/// Exponential tilt `f(x) e^{θx}` (renormalized) with mean zero.
///
/// Translates of a solution are again solutions, so discretization error
/// would otherwise make the iterates drift.
pub fn center(grid: &DensityGrid) -> Result<DensityGrid> {
    let xs: Vec<f64> = grid.nodes().collect();
    let logs = grid.log_values();
    let h = grid.spacing();
    let n = xs.len();
    let moments = |theta: f64| {
        // mass, first and second moments of the tilted density, relative to max
        let m = logs
            .iter()
            .zip(&xs)
            .map(|(l, x)| l + theta * x)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1, mut s2) = (
            Neumaier::default(),
            Neumaier::default(),
            Neumaier::default(),
        );
        for (i, (l, x)) in logs.iter().zip(&xs).enumerate() {
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            let v = w * (l + theta * x - m).exp();
            s0.add(v);
            s1.add(v * x);
            s2.add(v * x * x);
        }
        let mass = s0.sum();
        let mean = s1.sum() / mass;
        (mean, s2.sum() / mass - mean * mean)
    };
    let mut theta = 0.0;
    for _ in 0..50 {
        let (mean, var) = moments(theta);
        if mean.abs() < 1e-15 {
            break;
        }
        let step = mean / var;
        theta -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    let tilted = logs.iter().zip(&xs).map(|(l, x)| l + theta * x).collect();
    let g = DensityGrid::from_log_values(grid.x_min(), grid.x_max(), tilted)?;
    Ok(normalize(&g)?.with_meta(grid.meta))
}

/// Outcome of [`solve`]: the converged grid and the L1 change per iteration.
#[derive(Clone, Debug)]
pub struct Solution {
    pub grid: DensityGrid,
    pub trace: Vec<f64>,
}

pub fn solve(cfg: &SolverConfig) -> Result<Solution> {
    solve_from(cfg, cfg.initial_grid()?)
}

pub fn solve_from(cfg: &SolverConfig, init: DensityGrid) -> Result<Solution> {
    cfg.validate()?;
    let mut cur = init;
    let mut trace = Vec::new();
    for it in 1..=cfg.max_iter {
        let next = center(&apply_t(&cur, cfg)?)?;
        let r = residual(&next, &cur)?;
        trace.push(r);
        log::debug!(
            "iteration {it}: L1 change {r:e}, defect {:e}",
            next.meta.normalization_defect
        );
        cur = next;
        if r <= cfg.tol_l1 {
            cur.meta.iterations = it as u64;
            cur.meta.residual = r;
            return Ok(Solution { grid: cur, trace });
        }
    }
    Err(Error::Convergence { trace })
}
