//! Uniform-grid representation of a probability density and the read-only
//! numerics built on it: integration, CDF, running minima, finite-difference
//! derivatives and tail sup norms.
//!
//! A grid keeps `f` and `ln f` side by side. The solver produces `ln f`
//! directly, so the far left tail stays meaningful in `log_values` even where
//! `values` has underflowed to zero.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"QSDG";
pub const GRID_VERSION: u16 = 1;

/// Highest derivative order served by [`DensityGrid::derivative`].
pub const MAX_DERIVATIVE_ORDER: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub iterations: u64,
    pub residual: f64,
    /// Signed `mass - 1` of the last operator output before renormalization.
    pub normalization_defect: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Clone, Debug)]
pub struct DensityGrid {
    x_min: f64,
    x_max: f64,
    values: Vec<f64>,
    log_values: Vec<f64>,
    pub meta: GridMeta,
    // cumulative trapezoid integrals from the left and from the right
    cum: Vec<f64>,
    rcum: Vec<f64>,
}

impl PartialEq for DensityGrid {
    fn eq(&self, other: &Self) -> bool {
        self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.values == other.values
            && self.log_values == other.log_values
            && self.meta == other.meta
    }
}

fn check_geometry(x_min: f64, x_max: f64, n: usize) -> Result<()> {
    if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
        return Err(Error::domain(format!("bad grid domain [{x_min}, {x_max}]")));
    }
    if n < 2 {
        return Err(Error::domain("a grid needs at least two points"));
    }
    Ok(())
}

impl DensityGrid {
    pub fn from_values(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self> {
        check_geometry(x_min, x_max, values.len())?;
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!(
                "density value {v} is not a finite nonnegative number"
            )));
        }
        let log_values = values.iter().map(|v| v.ln()).collect();
        Ok(Self::assemble(x_min, x_max, values, log_values))
    }

    /// `log_values` may contain `-inf` (a zero density value) but no NaN or `+inf`.
    pub fn from_log_values(x_min: f64, x_max: f64, log_values: Vec<f64>) -> Result<Self> {
        check_geometry(x_min, x_max, log_values.len())?;
        if let Some(l) = log_values
            .iter()
            .find(|l| l.is_nan() || **l == f64::INFINITY)
        {
            return Err(Error::domain(format!("log density value {l} is invalid")));
        }
        let values = log_values.iter().map(|l| l.exp()).collect();
        Ok(Self::assemble(x_min, x_max, values, log_values))
    }

    pub fn from_fn(
        x_min: f64,
        x_max: f64,
        n_points: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        check_geometry(x_min, x_max, n_points)?;
        let h = (x_max - x_min) / (n_points - 1) as f64;
        let values = (0..n_points).map(|i| f(x_min + i as f64 * h)).collect();
        Self::from_values(x_min, x_max, values)
    }

    pub fn from_log_fn(
        x_min: f64,
        x_max: f64,
        n_points: usize,
        log_f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        check_geometry(x_min, x_max, n_points)?;
        let h = (x_max - x_min) / (n_points - 1) as f64;
        let logs = (0..n_points).map(|i| log_f(x_min + i as f64 * h)).collect();
        Self::from_log_values(x_min, x_max, logs)
    }

    fn assemble(x_min: f64, x_max: f64, values: Vec<f64>, log_values: Vec<f64>) -> Self {
        let n = values.len();
        let h = (x_max - x_min) / (n - 1) as f64;
        let mut cum = vec![0.0; n];
        for i in 1..n {
            cum[i] = cum[i - 1] + 0.5 * h * (values[i - 1] + values[i]);
        }
        let mut rcum = vec![0.0; n];
        for i in (0..n - 1).rev() {
            rcum[i] = rcum[i + 1] + 0.5 * h * (values[i] + values[i + 1]);
        }
        DensityGrid {
            x_min,
            x_max,
            values,
            log_values,
            meta: GridMeta::default(),
            cum,
            rcum,
        }
    }

    pub fn with_meta(mut self, meta: GridMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.values.len() - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.spacing();
        (0..self.n_points()).map(move |i| self.x_min + i as f64 * h)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn same_geometry(&self, other: &DensityGrid) -> bool {
        self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.n_points() == other.n_points()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Cell index and fractional position, with `x_max` mapped into the last cell.
    fn locate(&self, x: f64) -> (usize, f64) {
        let pos = (x - self.x_min) / self.spacing();
        let i = (pos.floor().max(0.0) as usize).min(self.n_points() - 2);
        (i, pos - i as f64)
    }

    /// `f(x)` by linear interpolation in log space (value space next to a zero).
    /// Zero outside the domain.
    pub fn value_at(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        let (i, t) = self.locate(x);
        let (l0, l1) = (self.log_values[i], self.log_values[i + 1]);
        if l0.is_finite() && l1.is_finite() {
            (l0 + t * (l1 - l0)).exp()
        } else {
            (1.0 - t) * self.values[i] + t * self.values[i + 1]
        }
    }

    /// `ln f(x)` by linear interpolation of `log_values`.
    pub fn log_value_at(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return f64::NEG_INFINITY;
        }
        let (i, t) = self.locate(x);
        let (l0, l1) = (self.log_values[i], self.log_values[i + 1]);
        if l0.is_finite() && l1.is_finite() {
            l0 + t * (l1 - l0)
        } else {
            ((1.0 - t) * self.values[i] + t * self.values[i + 1]).ln()
        }
    }

    /// Integral from `x_min` to `x` of the piecewise-linear interpolant.
    fn primitive(&self, x: f64) -> f64 {
        let (i, t) = self.locate(x);
        let h = self.spacing();
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        self.cum[i] + t * h * (v0 + 0.5 * t * (v1 - v0))
    }

    /// Integral from `x` to `x_max`, accumulated from the right.
    fn co_primitive(&self, x: f64) -> f64 {
        let (i, t) = self.locate(x);
        let h = self.spacing();
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        let s = 1.0 - t;
        // integral over [x, x_{i+1}] of the linear interpolant
        self.rcum[i + 1] + s * h * (v1 + 0.5 * s * (v0 - v1))
    }

    /// Trapezoid integral of `f` over `[a, b]`, interpolating linearly at
    /// off-node endpoints.
    pub fn integrate(&self, a: f64, b: f64) -> Result<f64> {
        if !(self.contains(a) && self.contains(b) && a <= b) {
            return Err(Error::domain(format!(
                "integration bounds [{a}, {b}] outside [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        Ok(self.primitive(b) - self.primitive(a))
    }

    pub fn total_mass(&self) -> f64 {
        self.cum[self.n_points() - 1]
    }

    /// `F(x)`, clamped to `[0, 1]` (0 left of the domain, 1 right of it).
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.x_min {
            return 0.0;
        }
        if x >= self.x_max {
            return self.total_mass().clamp(0.0, 1.0);
        }
        self.primitive(x).clamp(0.0, 1.0)
    }

    /// `1 - F(x)`, accumulated from the right end for tail accuracy.
    pub fn upper_tail(&self, x: f64) -> f64 {
        if x >= self.x_max {
            return 0.0;
        }
        if x <= self.x_min {
            return self.total_mass().clamp(0.0, 1.0);
        }
        self.co_primitive(x).clamp(0.0, 1.0)
    }

    fn moment_sum(&self, g: impl Fn(f64) -> f64) -> f64 {
        let h = self.spacing();
        let n = self.n_points();
        let mut acc = crate::quadrature::Neumaier::default();
        for (i, (&v, x)) in self.values.iter().zip(self.nodes()).enumerate() {
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            acc.add(w * v * g(x));
        }
        acc.sum()
    }

    pub fn mean(&self) -> f64 {
        self.moment_sum(|x| x) / self.total_mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment_sum(|x| (x - m) * (x - m)) / self.total_mass()
    }

    /// Running minimum: left gives `min_{[-z, 0]} f` capped at 1, right gives
    /// `min_{[0, z]} f` uncapped.
    pub fn tail_min(&self, side: Side, z: f64) -> Result<f64> {
        if !(z >= 0.0) {
            return Err(Error::domain(format!("tail_min needs z >= 0, got {z}")));
        }
        let (a, b) = match side {
            Side::Left => (-z, 0.0),
            Side::Right => (0.0, z),
        };
        if !(self.contains(a) && self.contains(b)) {
            return Err(Error::domain(format!(
                "[{a}, {b}] is outside the grid [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        let m = self.min_over(a, b);
        Ok(match side {
            Side::Left => m.min(1.0),
            Side::Right => m,
        })
    }

    /// Minimum over nodes in `[a, b]` and the interpolated endpoint values.
    fn min_over(&self, a: f64, b: f64) -> f64 {
        let h = self.spacing();
        let first = ((a - self.x_min) / h).ceil().max(0.0) as usize;
        let mut m = self.value_at(a).min(self.value_at(b));
        let mut i = first;
        while i < self.n_points() && self.node(i) <= b {
            m = m.min(self.values[i]);
            i += 1;
        }
        m
    }

    /// `f^(k)` by `k`-fold centered first differences (second order), with
    /// second-order one-sided differences at the two end nodes.
    pub fn derivative(&self, k: usize) -> Result<DerivativeTable> {
        if k == 0 || k > MAX_DERIVATIVE_ORDER {
            return Err(Error::Unsupported(format!(
                "derivative order {k} (supported: 1..={MAX_DERIVATIVE_ORDER})"
            )));
        }
        if self.n_points() < 2 * k + 1 {
            return Err(Error::domain(format!(
                "order {k} needs at least {} points",
                2 * k + 1
            )));
        }
        let mut cur = self.values.clone();
        for _ in 0..k {
            cur = first_difference(&cur, self.spacing());
        }
        Ok(DerivativeTable {
            order: k,
            x_min: self.x_min,
            spacing: self.spacing(),
            values: cur,
            margin: k,
        })
    }

    /// Order-0 table (the density itself) or [`DensityGrid::derivative`].
    pub fn derivative_or_self(&self, k: usize) -> Result<DerivativeTable> {
        if k == 0 {
            Ok(DerivativeTable {
                order: 0,
                x_min: self.x_min,
                spacing: self.spacing(),
                values: self.values.clone(),
                margin: 0,
            })
        } else {
            self.derivative(k)
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        w.write_all(&self.x_min.to_le_bytes())?;
        w.write_all(&self.x_max.to_le_bytes())?;
        w.write_all(&(self.n_points() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.log_values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.meta.iterations.to_le_bytes())?;
        w.write_all(&self.meta.residual.to_le_bytes())?;
        w.write_all(&self.meta.normalization_defect.to_le_bytes())?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::Format("bad grid-file magic".into()));
        }
        let mut two = [0u8; 2];
        r.read_exact(&mut two)?;
        let version = u16::from_le_bytes(two);
        if version != GRID_VERSION {
            return Err(Error::Format(format!(
                "unsupported grid-file version {version}"
            )));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let x_min = f64::from_le_bytes(next(&mut r)?);
        let x_max = f64::from_le_bytes(next(&mut r)?);
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        if n > (1 << 28) {
            return Err(Error::Format(format!("implausible grid size {n}")));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut logs = Vec::with_capacity(n);
        for _ in 0..n {
            logs.push(f64::from_le_bytes(next(&mut r)?));
        }
        let meta = GridMeta {
            iterations: u64::from_le_bytes(next(&mut r)?),
            residual: f64::from_le_bytes(next(&mut r)?),
            normalization_defect: f64::from_le_bytes(next(&mut r)?),
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes in grid file",
                rest.len()
            )));
        }
        check_geometry(x_min, x_max, n).map_err(|e| Error::Format(e.to_string()))?;
        let mut grid = Self::assemble(x_min, x_max, values, logs);
        grid.meta = meta;
        Ok(grid)
    }

    pub fn to_json(&self) -> GridJson {
        GridJson {
            format: "QSDG".into(),
            version: GRID_VERSION,
            x_min: self.x_min,
            x_max: self.x_max,
            n_points: self.n_points() as u64,
            values: self.values.clone(),
            log_values: self
                .log_values
                .iter()
                .map(|&l| l.is_finite().then_some(l))
                .collect(),
            meta: self.meta,
        }
    }

    pub fn from_json(j: GridJson) -> Result<Self> {
        if j.n_points as usize != j.values.len() || j.values.len() != j.log_values.len() {
            return Err(Error::Format(
                "grid JSON arrays disagree with n_points".into(),
            ));
        }
        check_geometry(j.x_min, j.x_max, j.values.len())?;
        let logs = j
            .log_values
            .into_iter()
            .map(|l| l.unwrap_or(f64::NEG_INFINITY))
            .collect();
        let mut grid = Self::assemble(j.x_min, j.x_max, j.values, logs);
        grid.meta = j.meta;
        Ok(grid)
    }
}

/// JSON mirror of the binary grid file; `null` log values stand for `-inf`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridJson {
    pub format: String,
    pub version: u16,
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: u64,
    pub values: Vec<f64>,
    pub log_values: Vec<Option<f64>>,
    pub meta: GridMeta,
}

fn first_difference(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let inv = 0.5 / h;
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) * inv;
    }
    if n >= 3 {
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) * inv;
        out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) * inv;
    } else {
        let d = (v[1] - v[0]) / h;
        out[0] = d;
        out[1] = d;
    }
    out
}

/// Values of `f^(k)` on the grid nodes. The first and last `margin` nodes are
/// computed with one-sided stencils and are excluded from norm computations.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeTable {
    pub order: usize,
    pub x_min: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
    pub margin: usize,
}

impl DerivativeTable {
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.spacing
    }

    pub fn x_max(&self) -> f64 {
        self.node(self.values.len() - 1)
    }

    /// Index range of trustworthy nodes.
    pub fn valid(&self) -> std::ops::RangeInclusive<usize> {
        self.margin..=self.values.len() - 1 - self.margin
    }

    pub fn valid_span(&self) -> (f64, f64) {
        (
            self.node(self.margin),
            self.node(self.values.len() - 1 - self.margin),
        )
    }

    /// Linear interpolation; `None` outside the valid span.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        let (lo, hi) = self.valid_span();
        if !(x >= lo && x <= hi) {
            return None;
        }
        let pos = (x - self.x_min) / self.spacing;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let t = pos - i as f64;
        Some((1.0 - t) * self.values[i] + t * self.values[i + 1])
    }

    /// `sup |table|` over the valid nodes in `[a, b]`, including the
    /// interpolated values at `a` and `b`.
    pub fn sup_abs_over(&self, a: f64, b: f64) -> Option<f64> {
        let (lo, hi) = self.valid_span();
        let a = a.max(lo);
        let b = b.min(hi);
        if a > b {
            return None;
        }
        let mut m = self.value_at(a)?.abs().max(self.value_at(b)?.abs());
        let first = ((a - self.x_min) / self.spacing).ceil().max(0.0) as usize;
        for i in first..=*self.valid().end() {
            if self.node(i) > b {
                break;
            }
            m = m.max(self.values[i].abs());
        }
        Some(m)
    }

    /// Number of sign changes over the valid nodes, ignoring exact zeros.
    pub fn sign_changes(&self) -> usize {
        let mut last = 0.0f64;
        let mut changes = 0;
        for &v in &self.values[self.valid()] {
            if v == 0.0 {
                continue;
            }
            if last != 0.0 && (v > 0.0) != (last > 0.0) {
                changes += 1;
            }
            last = v;
        }
        changes
    }
}

/// Tail sup norms `x -> ||h^(k)||_x` for `h = Fu` (`Fu(x) = F(-x)`, left) or
/// `h = F-bar` (`1 - F`, right), read off a density grid.
///
/// For `k >= 1`, `|Fu^(k)(t)| = |f^(k-1)(-t)|` and `|F-bar^(k)(t)| = |f^(k-1)(t)|`.
#[derive(Clone, Debug)]
pub struct TailNorms<'a> {
    grid: &'a DensityGrid,
    side: Side,
    tables: Vec<DerivativeTable>,
}

impl<'a> TailNorms<'a> {
    /// Prepares norms for `h^(k)` with `k <= max_order`.
    pub fn new(grid: &'a DensityGrid, side: Side, max_order: usize) -> Result<Self> {
        let tables = (0..max_order)
            .map(|j| grid.derivative_or_self(j))
            .collect::<Result<Vec<_>>>()?;
        Ok(TailNorms { grid, side, tables })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn max_order(&self) -> usize {
        self.tables.len()
    }

    /// `||h^(k)||_x`.
    pub fn sup_norm(&self, k: usize, x: f64) -> Result<f64> {
        if k > self.tables.len() {
            return Err(Error::Unsupported(format!(
                "norm of order {k} requested, prepared up to {}",
                self.tables.len()
            )));
        }
        let g = self.grid;
        if k == 0 {
            return match self.side {
                Side::Left if g.contains(-x) => Ok(g.cdf(-x)),
                Side::Right if g.contains(x) => Ok(g.upper_tail(x)),
                _ => Err(Error::domain(format!("empty tail window at x = {x}"))),
            };
        }
        let table = &self.tables[k - 1];
        let found = match self.side {
            Side::Left => table.sup_abs_over(f64::NEG_INFINITY, -x),
            Side::Right => table.sup_abs_over(x, f64::INFINITY),
        };
        found.ok_or_else(|| Error::domain(format!("empty tail window at x = {x} for order {k}")))
    }

    /// Value of `|f(-x)|` (left) or `|f(x)|` (right) at the tail point.
    pub fn density_at(&self, x: f64) -> f64 {
        match self.side {
            Side::Left => self.grid.value_at(-x),
            Side::Right => self.grid.value_at(x),
        }
    }
}

/// Tabulated `x -> ||h^(k)||_x` for one tail and derivative order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormProfile {
    pub k: usize,
    pub side: Side,
    pub xs: Vec<f64>,
    pub norms: Vec<f64>,
}

pub fn tail_sup_norm(grid: &DensityGrid, k: usize, side: Side, xs: &[f64]) -> Result<NormProfile> {
    if let Some(x) = xs.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::domain(format!(
            "tail points must be nonnegative, got {x}"
        )));
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("tail points must be increasing"));
    }
    let tn = TailNorms::new(grid, side, k)?;
    let norms = xs
        .iter()
        .map(|&x| tn.sup_norm(k, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(NormProfile {
        k,
        side,
        xs: xs.to_vec(),
        norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn gaussian(x_min: f64, x_max: f64, n: usize) -> DensityGrid {
        DensityGrid::from_fn(x_min, x_max, n, |x| {
            (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
        })
        .unwrap()
    }

    #[test]
    fn construction_rejects_garbage() {
        assert!(DensityGrid::from_values(0.0, 1.0, vec![1.0]).is_err());
        assert!(DensityGrid::from_values(1.0, 0.0, vec![1.0, 1.0]).is_err());
        assert!(DensityGrid::from_values(0.0, 1.0, vec![1.0, -1.0]).is_err());
        assert!(DensityGrid::from_values(0.0, 1.0, vec![1.0, f64::NAN]).is_err());
        assert!(DensityGrid::from_log_values(0.0, 1.0, vec![0.0, f64::NAN]).is_err());
        assert!(DensityGrid::from_log_values(0.0, 1.0, vec![0.0, f64::NEG_INFINITY]).is_ok());
    }

    #[test]
    fn dual_storage_agrees() {
        let g = DensityGrid::from_log_fn(-3.0, 3.0, 101, |x| -x.exp()).unwrap();
        for (&v, &l) in g.values().iter().zip(g.log_values()) {
            assert_eq!(v, l.exp());
        }
    }

    #[test]
    fn integration_rules() {
        let g = gaussian(-9.0, 9.0, 2001);
        assert_eq!(g.integrate(0.3, 0.3).unwrap(), 0.0);
        assert_abs_diff_eq!(g.integrate(-9.0, 9.0).unwrap(), 1.0, epsilon = 1e-9);
        let (a, b, c) = (-1.234, 0.1001, 2.71);
        let whole = g.integrate(a, c).unwrap();
        let split = g.integrate(a, b).unwrap() + g.integrate(b, c).unwrap();
        assert_abs_diff_eq!(whole, split, epsilon = 1e-12);
        assert!(g.integrate(-10.0, 0.0).is_err());
        assert!(g.integrate(1.0, 0.0).is_err());
    }

    #[test]
    fn cdf_and_upper_tail() {
        let g = gaussian(-9.0, 9.0, 2001);
        assert_eq!(g.cdf(-9.0), 0.0);
        assert_abs_diff_eq!(g.cdf(9.0), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(g.cdf(0.0), 0.5, epsilon = 1e-9);
        for x in [0.0, 0.5, 1.3, 4.0] {
            assert_abs_diff_eq!(g.upper_tail(x), 1.0 - g.cdf(x), epsilon = 1e-12);
        }
        let c = 2.0 * (g.cdf(1.0) - g.cdf(0.0));
        assert!(c > 0.0 && c < 2.0);
    }

    #[test]
    fn moments_of_gaussian() {
        let g = gaussian(-10.0, 10.0, 4001);
        assert_abs_diff_eq!(g.mean(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.variance(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn tail_min_examples() {
        let g =
            DensityGrid::from_fn(-3.0, 5.0, 801, |x| 1.7 * (-(x - 0.3) * (x - 0.3)).exp()).unwrap();
        assert_abs_diff_eq!(
            g.tail_min(Side::Left, 0.0).unwrap(),
            g.value_at(0.0).min(1.0)
        );
        assert_abs_diff_eq!(g.tail_min(Side::Right, 0.0).unwrap(), g.value_at(0.0));
        assert!(g.tail_min(Side::Right, 0.0).unwrap() > 1.0);
        assert!(g.tail_min(Side::Left, 3.5).is_err());
        assert!(g.tail_min(Side::Right, -1.0).is_err());

        // brute-force scan over [-2, 0]
        let brute = g
            .nodes()
            .zip(g.values())
            .filter(|(x, _)| (-2.0..=0.0).contains(x))
            .map(|(_, &v)| v)
            .chain([g.value_at(-2.0), g.value_at(0.0)])
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        assert_eq!(g.tail_min(Side::Left, 2.0).unwrap(), brute);

        let mut prev = f64::INFINITY;
        for i in 0..=40 {
            let z = 0.1 * i as f64;
            let m = g.tail_min(Side::Right, z).unwrap();
            assert!(m <= prev);
            prev = m;
        }
    }

    #[test]
    fn gaussian_derivatives() {
        let g = gaussian(-8.0, 8.0, 3201);
        let d1 = g.derivative(1).unwrap();
        let d2 = g.derivative(2).unwrap();
        let mid = 1600;
        assert_abs_diff_eq!(d1.node(mid), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d1.values[mid], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(d2.values[mid], -1.0 / (2.0 * PI).sqrt(), epsilon = 1e-4);
        // fundamental theorem on the trapezoid rule
        let h = g.spacing();
        let n = d1.values.len();
        let integral: f64 = d1
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if i == 0 || i == n - 1 {
                    0.5 * h * v
                } else {
                    h * v
                }
            })
            .sum();
        let vals = g.values();
        assert_abs_diff_eq!(integral, vals[n - 1] - vals[0], epsilon = 1e-6);
        // iterating order one twice is order two
        let twice = first_difference(&d1.values, h);
        for i in d2.valid() {
            assert_abs_diff_eq!(twice[i], d2.values[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn derivative_order_limits() {
        let g = gaussian(-1.0, 1.0, 13);
        assert!(matches!(g.derivative(7), Err(Error::Unsupported(_))));
        assert!(matches!(g.derivative(0), Err(Error::Unsupported(_))));
        assert!(g.derivative(6).is_ok());
        let tiny = gaussian(-1.0, 1.0, 5);
        assert!(tiny.derivative(3).is_err());
    }

    #[test]
    fn derivative_accuracy_is_second_order() {
        // error ratio under halving h should be about 4
        let err = |n: usize| {
            let g = gaussian(-6.0, 6.0, n);
            let d = g.derivative(3).unwrap();
            d.valid()
                .map(|i| {
                    let x = d.node(i);
                    let exact = (3.0 * x - x.powi(3)) * (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
                    (d.values[i] - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(601) / err(1201);
        assert!(ratio > 3.5 && ratio < 4.5, "{ratio}");
    }

    #[test]
    fn norm_profiles() {
        let raw = gaussian(-7.0, 7.0, 1401);
        let mass = raw.total_mass();
        let g =
            DensityGrid::from_values(-7.0, 7.0, raw.values().iter().map(|v| v / mass).collect())
                .unwrap();
        let xs = [0.0, 0.25, 0.5, 1.0, 2.0, 3.0];
        let p0 = tail_sup_norm(&g, 0, Side::Right, &xs).unwrap();
        assert_abs_diff_eq!(p0.norms[0], 1.0 - g.cdf(0.0), epsilon = 1e-12);
        for (x, n) in xs.iter().zip(&p0.norms) {
            assert_abs_diff_eq!(*n, 1.0 - g.cdf(*x), epsilon = 1e-12);
        }
        for k in 0..4 {
            for side in [Side::Left, Side::Right] {
                let p = tail_sup_norm(&g, k, side, &xs).unwrap();
                assert!(p.norms.windows(2).all(|w| w[1] <= w[0]), "k = {k}, {side}");
            }
        }
        // k = 1 on the right is the sup of f over [x, x_max]
        let p1 = tail_sup_norm(&g, 1, Side::Right, &xs).unwrap();
        for (x, n) in xs.iter().zip(&p1.norms) {
            let scan = g
                .nodes()
                .zip(g.values())
                .filter(|(t, _)| t >= x)
                .map(|(_, &v)| v)
                .chain([g.value_at(*x)])
                .fold(0.0, f64::max);
            assert_abs_diff_eq!(*n, scan, epsilon = 1e-15);
        }
        assert!(tail_sup_norm(&g, 1, Side::Right, &[8.0]).is_err());
        assert!(tail_sup_norm(&g, 1, Side::Right, &[-1.0]).is_err());
    }

    #[test]
    fn binary_and_json_round_trip() {
        let g = DensityGrid::from_log_fn(-2.0, 2.0, 9, |x| {
            if x < -1.5 {
                f64::NEG_INFINITY
            } else {
                -x * x
            }
        })
        .unwrap()
        .with_meta(GridMeta {
            iterations: 7,
            residual: 1e-7,
            normalization_defect: -2e-5,
        });
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 8 + 8 + 8 + 9 * 16 + 24);
        assert_eq!(&buf[..4], b"QSDG");
        let back = DensityGrid::read_binary(&buf[..]).unwrap();
        assert_eq!(back, g);
        let json = serde_json::to_string(&g.to_json()).unwrap();
        let back: GridJson = serde_json::from_str(&json).unwrap();
        assert_eq!(DensityGrid::from_json(back).unwrap(), g);
        assert!(DensityGrid::read_binary(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn sign_changes_of_unimodal() {
        let g = gaussian(-5.0, 5.0, 501);
        assert_eq!(g.derivative(1).unwrap().sign_changes(), 1);
    }
}
