//! Landau-Kolmogorov checks on tail functions, the characteristic function of
//! a grid density and the explicit sup-norm bounds on derivatives of `f`.

use std::f64::consts::{E, PI};

use serde::Serialize;

use crate::density::{DensityGrid, Side, TailNorms, MAX_DERIVATIVE_ORDER};
use crate::error::{Error, Result};
use crate::quadrature::Neumaier;

/// Multiplicative slack on grid-evaluated inequalities.
pub const DEFAULT_LK_SLACK: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LkConstant {
    pub n: usize,
    pub k: usize,
    pub bound: f64,
}

/// `(e² n / 4k)^k`, an upper bound on the best constant `c_{n,k}` for `k <= n/2`.
pub fn lk_bound(n: usize, k: usize) -> Result<f64> {
    if n < 2 || k < 1 || 2 * k > n {
        return Err(Error::domain(format!(
            "LK constant needs n >= 2 and 1 <= k <= n/2, got n = {n}, k = {k}"
        )));
    }
    Ok((E * E * n as f64 / (4.0 * k as f64)).powi(k as i32))
}

pub fn lk_constant(n: usize, k: usize) -> Result<LkConstant> {
    Ok(LkConstant {
        n,
        k,
        bound: lk_bound(n, k)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LkRow {
    pub x: f64,
    pub norm_0: f64,
    pub norm_k: f64,
    pub norm_n: f64,
    /// `c · ||h||^{1-k/n} ||h^(n)||^{k/n}`
    pub rhs: f64,
    /// `norm_k / rhs`
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LkReport {
    pub side: Side,
    pub n: usize,
    pub k: usize,
    pub bound: f64,
    pub slack: f64,
    pub rows: Vec<LkRow>,
    pub worst_ratio: f64,
    pub pass: bool,
}

fn lk_row(x: f64, k: usize, n: usize, c: f64, slack: f64, norms: (f64, f64, f64)) -> LkRow {
    let (norm_0, norm_k, norm_n) = norms;
    let t = k as f64 / n as f64;
    let rhs = c * norm_0.powf(1.0 - t) * norm_n.powf(t);
    let ratio = if rhs > 0.0 {
        norm_k / rhs
    } else if norm_k == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    LkRow {
        x,
        norm_0,
        norm_k,
        norm_n,
        rhs,
        ratio,
        pass: ratio <= slack,
    }
}

/// Checks `||h^(k)||_x <= slack · c_{n,k} ||h||_x^{1-k/n} ||h^(n)||_x^{k/n}`
/// with `h = Fu` (left) or `h = F-bar` (right) at each `x`.
pub fn verify_lk(
    grid: &DensityGrid,
    side: Side,
    k: usize,
    n: usize,
    xs: &[f64],
    slack: f64,
) -> Result<LkReport> {
    let bound = lk_bound(n, k)?;
    if n > MAX_DERIVATIVE_ORDER {
        return Err(Error::domain(format!(
            "n = {n} exceeds the derivative cap {MAX_DERIVATIVE_ORDER}"
        )));
    }
    if xs.is_empty() {
        return Err(Error::domain("no tail points given"));
    }
    let norms = TailNorms::new(grid, side, n)?;
    let rows = xs
        .iter()
        .map(|&x| {
            let triple = (
                norms.sup_norm(0, x)?,
                norms.sup_norm(k, x)?,
                norms.sup_norm(n, x)?,
            );
            Ok(lk_row(x, k, n, bound, slack, triple))
        })
        .collect::<Result<Vec<_>>>()?;
    let worst_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(LkReport {
        side,
        n,
        k,
        bound,
        slack,
        pass: rows.iter().all(|r| r.pass),
        rows,
        worst_ratio,
    })
}

/// `(e²k/4)^{-k} ||h||^{-(k-1)} d^k`, where `d` stands for `||h'||_x` or the
/// smaller `f(∓x)`.
pub fn lk_lower_from_norms(k: usize, norm_0: f64, d: f64) -> f64 {
    let c = E * E * k as f64 / 4.0;
    c.powi(-(k as i32)) * norm_0.powi(-(k as i32 - 1)) * d.powi(k as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LkLowerReport {
    pub side: Side,
    pub k: usize,
    pub x: f64,
    pub bound: f64,
    pub direct: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Lower bound on `||h^(k)||_x` from the LK inequality with `(n, k) -> (k, 1)`
/// and `||h'||_x >= f(∓x)`, compared with the directly computed norm.
pub fn lower_bound_from_lk(
    grid: &DensityGrid,
    side: Side,
    k: usize,
    x: f64,
    slack: f64,
) -> Result<LkLowerReport> {
    if !(2..=MAX_DERIVATIVE_ORDER).contains(&k) {
        return Err(Error::domain(format!(
            "k = {k} outside 2..={MAX_DERIVATIVE_ORDER}"
        )));
    }
    let norms = TailNorms::new(grid, side, k)?;
    let norm_0 = norms.sup_norm(0, x)?;
    let direct = norms.sup_norm(k, x)?;
    let bound = lk_lower_from_norms(k, norm_0, norms.density_at(x));
    Ok(LkLowerReport {
        side,
        k,
        x,
        bound,
        direct,
        slack,
        pass: direct * slack >= bound,
    })
}

/// `|φ(t)|` sampled at `ts`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiTable {
    pub ts: Vec<f64>,
    pub phi_abs: Vec<f64>,
}

/// `2^{p² + 6p} |t|^{-p}`
pub fn phi_decay_bound(p: u32, t: f64) -> f64 {
    let p = p as i32;
    2f64.powi(p * p + 6 * p) * t.abs().powi(-p)
}

impl PhiTable {
    /// Largest `|φ(t)| / bound(p, t)` over `|t| >= 1` (or all `t` for `p = 0`).
    pub fn worst_decay_ratio(&self, p: u32) -> f64 {
        self.ts
            .iter()
            .zip(&self.phi_abs)
            .filter(|(t, _)| p == 0 || t.abs() >= 1.0)
            .map(|(&t, &a)| a / phi_decay_bound(p, t))
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,abs_phi\n");
        for (t, a) in self.ts.iter().zip(&self.phi_abs) {
            s.push_str(&format!(
                "{},{}\n",
                crate::report::fmt_f64(*t),
                crate::report::fmt_f64(*a)
            ));
        }
        s
    }
}

/// Highest frequency the grid resolves, `π / h`.
pub fn nyquist(grid: &DensityGrid) -> f64 {
    PI / grid.spacing()
}

/// `count` equally spaced frequencies on `[0, π/h]`.
pub fn default_ts(grid: &DensityGrid, count: usize) -> Vec<f64> {
    let t_max = nyquist(grid);
    let count = count.max(2);
    (0..count)
        .map(|i| t_max * i as f64 / (count - 1) as f64)
        .collect()
}

/// `|∫ e^{itx} f(x) dx|` by the trapezoid rule on the grid nodes.
pub fn phi_from_grid(grid: &DensityGrid, ts: &[f64]) -> Result<PhiTable> {
    let t_max = nyquist(grid);
    if let Some(t) = ts
        .iter()
        .find(|t| !t.is_finite() || t.abs() > t_max * (1.0 + 1e-12))
    {
        return Err(Error::domain(format!(
            "frequency {t} beyond the grid limit {t_max}; the transform would alias"
        )));
    }
    let h = grid.spacing();
    let last = grid.n_points() - 1;
    let phi_abs = ts
        .iter()
        .map(|&t| {
            let mut re = Neumaier::default();
            let mut im = Neumaier::default();
            for (i, (x, &v)) in grid.nodes().zip(grid.values()).enumerate() {
                let w = if i == 0 || i == last { 0.5 * h } else { h };
                let (s, c) = (t * x).sin_cos();
                re.add(w * v * c);
                im.add(w * v * s);
            }
            re.sum().hypot(im.sum())
        })
        .collect();
    Ok(PhiTable {
        ts: ts.to_vec(),
        phi_abs,
    })
}

/// Largest `k` for which the bound is finite in double precision.
pub const FK_BOUND_MAX_ORDER: usize = 40;

/// `2^{k² + 10k + 17}`; `+inf` for `k` above [`FK_BOUND_MAX_ORDER`] or when the
/// power of two overflows.
pub fn fk_sup_bound(k: usize) -> f64 {
    if k > FK_BOUND_MAX_ORDER {
        return f64::INFINITY;
    }
    let e = (k * k + 10 * k + 17) as i32;
    2f64.powi(e)
}

/// `sup |f^(k)|` over the valid grid nodes.
pub fn grid_sup_derivative(grid: &DensityGrid, k: usize) -> Result<f64> {
    let table = grid.derivative_or_self(k)?;
    Ok(table.values[table.valid()]
        .iter()
        .fold(0.0, |m, v| m.max(v.abs())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerOfTwo {
    pub log2: f64,
    /// `2^log2` when finite in double precision.
    pub value: Option<f64>,
}

/// `a_{n,k} = 2^{(k+n-1)² + 10(k+n-1) + 17}`.
pub fn a_nk(n: usize, k: usize) -> Result<PowerOfTwo> {
    if n < 2 {
        return Err(Error::domain(format!("a_(n,k) needs n >= 2, got {n}")));
    }
    let m = (k + n - 1) as f64;
    let log2 = m * m + 10.0 * m + 17.0;
    let v = log2.exp2();
    Ok(PowerOfTwo {
        log2,
        value: v.is_finite().then_some(v),
    })
}

/// Sign changes of `f'` over the valid nodes; `1` for a unimodal grid.
pub fn derivative_sign_changes(grid: &DensityGrid) -> Result<usize> {
    Ok(grid.derivative(1)?.sign_changes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn std_normal() -> DensityGrid {
        DensityGrid::from_fn(-10.0, 10.0, 20001, |x| {
            (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
        })
        .unwrap()
    }

    /// Density whose right tail function is exactly `exp(-t²)` on `t >= 0`.
    fn planted_tail() -> DensityGrid {
        DensityGrid::from_fn(0.0, 6.0, 60001, |t| 2.0 * t * (-t * t).exp()).unwrap()
    }

    #[test]
    fn lk_constants() {
        assert_relative_eq!(lk_bound(2, 1).unwrap(), E * E / 2.0, max_relative = 1e-15);
        assert_abs_diff_eq!(lk_bound(2, 1).unwrap(), 3.6945, epsilon = 1e-4);
        assert_abs_diff_eq!(lk_bound(4, 1).unwrap(), 7.3891, epsilon = 1e-4);
        assert_abs_diff_eq!(lk_bound(4, 2).unwrap(), 13.650, epsilon = 1e-3);
        assert!(lk_bound(4, 3).is_err());
        assert!(lk_bound(1, 1).is_err());
        assert!(lk_bound(4, 0).is_err());
    }

    #[test]
    fn planted_exp_tail_norms() {
        let g = planted_tail();
        let tn = TailNorms::new(&g, Side::Right, 2).unwrap();
        assert_abs_diff_eq!(tn.sup_norm(0, 0.0).unwrap(), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(
            tn.sup_norm(1, 0.0).unwrap(),
            2f64.sqrt() * (-0.5f64).exp(),
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(tn.sup_norm(2, 0.0).unwrap(), 2.0, epsilon = 1e-6);
        let r = verify_lk(&g, Side::Right, 1, 2, &[0.0], 1.0).unwrap();
        assert!(r.pass);
        let exact = 2f64.sqrt() * (-0.5f64).exp() / (E * E / 2.0 * 2f64.sqrt());
        assert_abs_diff_eq!(r.worst_ratio, exact, epsilon = 1e-6);
    }

    #[test]
    fn gaussian_lk_and_lower_bound() {
        let g = std_normal();
        let phi0 = 1.0 / (2.0 * PI).sqrt();
        let r = verify_lk(&g, Side::Left, 1, 2, &[0.0], 1.0).unwrap();
        let row = &r.rows[0];
        assert_abs_diff_eq!(row.norm_0, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(row.norm_k, phi0, epsilon = 1e-6);
        assert_abs_diff_eq!(row.norm_n, phi0 * (-0.5f64).exp(), epsilon = 1e-6);
        assert!(r.pass);
        for n in 2..=6 {
            for k in 1..=n / 2 {
                for side in [Side::Left, Side::Right] {
                    let r = verify_lk(&g, side, k, n, &[0.0, 0.5, 1.0, 2.0], 1.0).unwrap();
                    assert!(r.pass, "n={n} k={k} {side}: {}", r.worst_ratio);
                }
            }
        }
        let lb = lower_bound_from_lk(&g, Side::Left, 2, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            lb.bound,
            (E * E / 2.0).powi(-2) * 2.0 * phi0 * phi0,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(lb.direct, phi0 * (-0.5f64).exp(), epsilon = 1e-6);
        assert!(lb.pass);
    }

    #[test]
    fn lower_bound_is_lk_rearranged() {
        // LK with (n, k) = (k, 1): ||h'|| <= c ||h||^{1-1/k} ||h^(k)||^{1/k}
        for k in 2..=6usize {
            let (n0, n1, nk) = (0.3, 0.7, 2.5);
            let row = lk_row(0.0, 1, k, lk_bound(k, 1).unwrap(), 1.0, (n0, n1, nk));
            let via_lower = nk / lk_lower_from_norms(k, n0, n1);
            assert_relative_eq!(row.ratio.powi(-(k as i32)), via_lower, max_relative = 1e-9);
        }
    }

    #[test]
    fn lk_rejects_bad_orders() {
        let g = std_normal();
        assert!(verify_lk(&g, Side::Left, 2, 3, &[0.0], 1.1).is_err());
        assert!(verify_lk(&g, Side::Left, 4, 8, &[0.0], 1.1).is_err());
        assert!(verify_lk(&g, Side::Left, 1, 2, &[20.0], 1.1).is_err());
        assert!(lower_bound_from_lk(&g, Side::Left, 1, 0.0, 1.1).is_err());
    }

    #[test]
    fn phi_of_gaussian() {
        let g = std_normal();
        let ts = default_ts(&g, 200);
        let table = phi_from_grid(&g, &ts).unwrap();
        assert_abs_diff_eq!(table.phi_abs[0], 1.0, epsilon = 1e-3);
        for (&t, &a) in table.ts.iter().zip(&table.phi_abs) {
            assert!(a <= 1.0 + 1e-12);
            assert_abs_diff_eq!(a, (-0.5 * t * t).exp(), epsilon = 1e-9);
        }
        for p in 0..=3 {
            assert!(table.worst_decay_ratio(p) <= 1.0);
        }
        assert!(phi_from_grid(&g, &[nyquist(&g) * 1.01]).is_err());
        assert!(table.to_csv().starts_with("t,abs_phi\n"));
    }

    #[test]
    fn explicit_bounds() {
        assert_eq!(fk_sup_bound(0), 131072.0);
        assert_eq!(fk_sup_bound(1), 2f64.powi(28));
        assert_eq!(fk_sup_bound(41), f64::INFINITY);
        assert_eq!(a_nk(2, 0).unwrap().log2, 28.0);
        assert_eq!(a_nk(3, 0).unwrap().log2, 41.0);
        assert_eq!(a_nk(2, 0).unwrap().value, Some(2f64.powi(28)));
        assert_eq!(a_nk(30, 10).unwrap().value, None);
        assert!(a_nk(1, 0).is_err());
        for n in 2..10 {
            for k in 0..10 {
                let here = a_nk(n, k).unwrap().log2;
                assert!(a_nk(n + 1, k).unwrap().log2 > here);
                assert!(a_nk(n, k + 1).unwrap().log2 > here);
            }
        }
    }

    #[test]
    fn gaussian_derivative_sups() {
        let g = std_normal();
        assert_abs_diff_eq!(
            grid_sup_derivative(&g, 0).unwrap(),
            1.0 / (2.0 * PI).sqrt(),
            epsilon = 1e-12
        );
        for k in 0..=6 {
            assert!(grid_sup_derivative(&g, k).unwrap() <= fk_sup_bound(k));
        }
        assert_eq!(derivative_sign_changes(&g).unwrap(), 1);
    }
}
