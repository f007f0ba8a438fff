//! Gauss-Legendre rules, composite panel rules and compensated summation.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::domain("Gauss-Legendre order must be positive"));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let pn = if n == 0 { 1.0 } else { p1 };
    let dpn = n as f64 * (x * pn - p0) / (x * x - 1.0);
    (pn, dpn)
}

/// A composite rule: a fixed Gauss-Legendre rule mapped onto each panel.
#[derive(Clone, Debug)]
pub struct PanelRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PanelRule {
    pub fn new(breakpoints: &[f64], order: usize) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain(
                "panel breakpoints must be strictly increasing",
            ));
        }
        let (gx, gw) = gauss_legendre(order)?;
        let mut nodes = Vec::with_capacity(order * (breakpoints.len() - 1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        for w in breakpoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, wt) in gx.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * wt);
            }
        }
        Ok(PanelRule { nodes, weights })
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = Neumaier::default();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * f(x));
        }
        acc.sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Breakpoints on `(0, 1/2]` refined geometrically toward both ends.
///
/// `panels` counts all panels; two thirds (rounded up) halve toward `u = 0`,
/// the rest halve toward `u = 1/2`.
pub fn toll_breakpoints(panels: usize) -> Result<Vec<f64>> {
    if panels < 4 {
        return Err(Error::domain(format!(
            "need at least 4 u-panels, got {panels}"
        )));
    }
    let center = panels / 3;
    let origin = panels - center;
    // origin side: 0, 2^-(origin+1), ..., 1/8, 1/4
    let mut pts = vec![0.0];
    for j in (0..origin).rev() {
        pts.push(0.25 * 0.5f64.powi(j as i32));
    }
    // center side: 1/2 - 1/4 * 2^-j for j = 1..center, then 1/2
    for j in 1..center {
        pts.push(0.5 - 0.25 * 0.5f64.powi(j as i32));
    }
    pts.push(0.5);
    Ok(pts)
}

/// Neumaier's compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = Neumaier::default();
    for x in xs {
        acc.add(x);
    }
    acc.sum()
}
