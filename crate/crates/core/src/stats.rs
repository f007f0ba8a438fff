//! Sample statistics and Kolmogorov-Smirnov distances.

use crate::quadrature::Neumaier;

pub fn mean(xs: &[f64]) -> f64 {
    let mut acc = Neumaier::default();
    for &x in xs {
        acc.add(x);
    }
    acc.sum() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut acc = Neumaier::default();
    for &x in xs {
        acc.add((x - m) * (x - m));
    }
    acc.sum() / (xs.len() as f64 - 1.0)
}

/// Right-continuous empirical CDF over a sorted copy of the data.
#[derive(Clone, Debug)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(xs: &[f64]) -> Self {
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ecdf { sorted }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `sup_x |F_n(x) - cdf(x)|` against a continuous CDF.
    pub fn ks_against(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let n = self.sorted.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in self.sorted.iter().enumerate() {
            let c = cdf(x);
            d = d
                .max((c - i as f64 / n).abs())
                .max(((i + 1) as f64 / n - c).abs());
        }
        d
    }
}

/// Two-sample KS statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let ea = Ecdf::new(a);
    let eb = Ecdf::new(b);
    let (xa, xb) = (ea.sorted(), eb.sorted());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
