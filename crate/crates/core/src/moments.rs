//! Exact finite-`n` moments of the QuickSort comparison count `X_n`.
//!
//! Moments come from conditioning on the uniform pivot rank: given `U_n = k`,
//! `X_n = X_{k-1} + X*_{n-k} + n - 1` with independent subproblem counts.
//! Up to a configurable size the recurrence runs in exact integer arithmetic
//! with all values scaled by `lcm(1..N)` (first moment) and its square
//! (second moment); beyond it a compensated `f64` path continues.

use std::fmt;
use std::io::Write;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::quadrature::Neumaier;

pub const DEFAULT_EXACT_CAP: usize = 2000;

/// `H_n` as an exact rational.
pub fn harmonic(n: u64) -> Result<BigRational> {
    if n == 0 {
        return Err(Error::domain("harmonic number needs n >= 1"));
    }
    // sum over a common denominator, reduced once at the end
    let den = lcm_upto(n as usize);
    let mut num = BigInt::zero();
    for k in 1..=n {
        num += &den / BigInt::from(k);
    }
    Ok(BigRational::new(num, den))
}

/// `E X_n = 2(n+1) H_n - 4n`, and `0` for `n <= 1`.
pub fn exact_mean(n: u64) -> BigRational {
    if n <= 1 {
        return BigRational::zero();
    }
    let h = harmonic(n).expect("n >= 2");
    h * BigRational::from_integer(BigInt::from(2 * (n + 1)))
        - BigRational::from_integer(BigInt::from(4 * n))
}

/// `2(n+1) H_n - 4n` for `n = 0..=n_max`, with `H_n` accumulated over the
/// common denominator `lcm(1..n_max)`.
pub fn closed_form_means(n_max: usize) -> Vec<BigRational> {
    let den = lcm_upto(n_max.max(1));
    let mut h = BigInt::zero();
    let mut out = vec![BigRational::zero()];
    for n in 1..=n_max {
        h += &den / BigInt::from(n);
        let num = &h * BigInt::from(2 * (n + 1)) - &den * BigInt::from(4 * n);
        out.push(BigRational::new(num, den.clone()));
    }
    out[1] = BigRational::zero();
    out
}

/// Floating-point `E X_n` with a compensated harmonic sum.
pub fn mean_f64(n: u64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let mut h = Neumaier::default();
    for k in (1..=n).rev() {
        h.add(1.0 / k as f64);
    }
    2.0 * (n as f64 + 1.0) * h.sum() - 4.0 * n as f64
}

/// `E X_n` for `n = 0..=n_max` from `E X_n = n - 1 + (2/n) sum_{k<n} E X_k`.
pub fn mean_by_recurrence(n_max: usize) -> Vec<BigRational> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(BigRational::zero());
    let mut prefix = BigRational::zero();
    for n in 1..=n_max {
        prefix += &out[n - 1];
        let two_over_n = BigRational::new(BigInt::from(2), BigInt::from(n));
        out.push(BigRational::from_integer(BigInt::from(n - 1)) + &prefix * two_over_n);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum MomentValue {
    Exact(BigRational),
    Approx(f64),
}

impl MomentValue {
    pub fn to_f64(&self) -> f64 {
        match self {
            MomentValue::Exact(q) => rational_to_f64(q),
            MomentValue::Approx(x) => *x,
        }
    }

    pub fn as_exact(&self) -> Option<&BigRational> {
        match self {
            MomentValue::Exact(q) => Some(q),
            MomentValue::Approx(_) => None,
        }
    }
}

impl fmt::Display for MomentValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentValue::Exact(q) if q.denom().is_one() => write!(f, "{}", q.numer()),
            MomentValue::Exact(q) => write!(f, "{}/{}", q.numer(), q.denom()),
            MomentValue::Approx(x) => f.write_str(&crate::report::fmt_f64(*x)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub n: u64,
    pub mean: MomentValue,
    pub variance: MomentValue,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentTable {
    pub rows: Vec<MomentRow>,
}

impl MomentTable {
    pub fn row(&self, n: u64) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    /// CSV with header `n,mean,variance`; exact rows render as `p/q`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,mean,variance")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.n, r.mean, r.variance)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Exact mean and variance of `X_n` for `n = 0..=n_max` (exact up to
/// [`DEFAULT_EXACT_CAP`]).
pub fn exact_variance_table(n_max: usize) -> Result<MomentTable> {
    moment_table(n_max, DEFAULT_EXACT_CAP)
}

pub fn moment_table(n_max: usize, exact_cap: usize) -> Result<MomentTable> {
    if n_max == 0 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    let exact_top = n_max.min(exact_cap);
    let mut rows = Vec::with_capacity(n_max + 1);

    let (means, seconds, d1) = exact_scaled_moments(exact_top);
    let d2 = &d1 * &d1;
    for n in 0..=exact_top {
        let mean = BigRational::new(means[n].clone(), d1.clone());
        let var_scaled = &seconds[n] - &means[n] * &means[n];
        let var = BigRational::new(var_scaled, d2.clone());
        rows.push(MomentRow {
            n: n as u64,
            mean: MomentValue::Exact(mean),
            variance: MomentValue::Exact(var),
        });
    }

    if n_max > exact_top {
        let mu: Vec<f64> = (0..=n_max).map(|n| mean_f64(n as u64)).collect();
        let mut second: Vec<f64> = rows
            .iter()
            .map(|r| {
                let m = r.mean.to_f64();
                r.variance.to_f64() + m * m
            })
            .collect();
        let mut prefix_second = compensated(&second);
        let mut prefix_mean = compensated(&mu[..=exact_top]);
        for n in exact_top + 1..=n_max {
            let nf = n as f64;
            let mut cross = Neumaier::default();
            for k in 1..=n {
                cross.add(mu[k - 1] * mu[n - k]);
            }
            let s = (2.0 * prefix_second.sum()
                + 2.0 * cross.sum()
                + 4.0 * (nf - 1.0) * prefix_mean.sum())
                / nf
                + (nf - 1.0) * (nf - 1.0);
            second.push(s);
            prefix_second.add(s);
            prefix_mean.add(mu[n]);
            rows.push(MomentRow {
                n: n as u64,
                mean: MomentValue::Approx(mu[n]),
                variance: MomentValue::Approx(s - mu[n] * mu[n]),
            });
        }
    }
    Ok(MomentTable { rows })
}

fn compensated(xs: &[f64]) -> Neumaier {
    let mut acc = Neumaier::default();
    for &x in xs {
        acc.add(x);
    }
    acc
}

/// Returns `(E X_n * D, E X_n^2 * D^2, D)` for `n = 0..=n_max`, `D = lcm(1..n_max)`.
fn exact_scaled_moments(n_max: usize) -> (Vec<BigInt>, Vec<BigInt>, BigInt) {
    let d1 = lcm_upto(n_max.max(1));
    let d2 = &d1 * &d1;
    let mut m1: Vec<BigInt> = Vec::with_capacity(n_max + 1);
    let mut m2: Vec<BigInt> = Vec::with_capacity(n_max + 1);
    m1.push(BigInt::zero());
    m2.push(BigInt::zero());
    let mut s1 = BigInt::zero();
    let mut s2 = BigInt::zero();
    for n in 1..=n_max {
        s1 += &m1[n - 1];
        s2 += &m2[n - 1];
        let nb = BigInt::from(n);
        let nm1 = BigInt::from(n - 1);

        let first = &nm1 * &d1 + exact_div(&(&s1 * 2u32), &nb);

        // sum_{k=1}^n m1[k-1] m1[n-k], folded by symmetry
        let mut cross = BigInt::zero();
        for k in 1..=n / 2 {
            cross += &m1[k - 1] * &m1[n - k];
        }
        cross *= 2u32;
        if n % 2 == 1 {
            let mid = &m1[(n - 1) / 2];
            cross += mid * mid;
        }

        let numer = &s2 * 2u32 + cross * 2u32 + &nm1 * 4u32 * &d1 * &s1;
        let second = exact_div(&numer, &nb) + &nm1 * &nm1 * &d2;
        m1.push(first);
        m2.push(second);
    }
    (m1, m2, d1)
}

fn exact_div(a: &BigInt, b: &BigInt) -> BigInt {
    let (q, r) = a.div_rem(b);
    assert!(r.is_zero(), "scaled moment recurrence left a remainder");
    q
}

fn lcm_upto(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc.lcm(&BigInt::from(k)))
}

/// Largest `n` accepted by [`enumerate_comparisons`].
pub const MAX_ENUMERATION: usize = 10;

/// Comparison counts of first-element-pivot QuickSort over all `n!`
/// permutations of `0..n`.
pub fn enumerate_comparisons(n: usize) -> Result<Vec<u64>> {
    if n > MAX_ENUMERATION {
        return Err(Error::Resource(format!(
            "enumerating {n}! permutations (cap {MAX_ENUMERATION})"
        )));
    }
    fn count(xs: &[usize]) -> u64 {
        if xs.len() <= 1 {
            return 0;
        }
        let p = xs[0];
        let (lo, hi): (Vec<usize>, Vec<usize>) = xs[1..].iter().partition(|&&x| x < p);
        (xs.len() - 1) as u64 + count(&lo) + count(&hi)
    }
    fn walk(xs: &mut Vec<usize>, k: usize, out: &mut Vec<u64>) {
        if k == xs.len() {
            out.push(count(xs));
            return;
        }
        for i in k..xs.len() {
            xs.swap(k, i);
            walk(xs, k + 1, out);
            xs.swap(k, i);
        }
    }
    let mut out = Vec::new();
    walk(&mut (0..n).collect(), 0, &mut out);
    Ok(out)
}

/// Exact `(E X_n, Var X_n)` by enumeration.
pub fn enumerated_moments(n: usize) -> Result<(BigRational, BigRational)> {
    let counts = enumerate_comparisons(n)?;
    let total = BigInt::from(counts.len());
    let s1: BigInt = counts.iter().map(|&c| BigInt::from(c)).sum();
    let s2: BigInt = counts.iter().map(|&c| BigInt::from(c * c)).sum();
    let mean = BigRational::new(s1, total.clone());
    let second = BigRational::new(s2, total);
    let var = &second - &mean * &mean;
    Ok((mean, var))
}

pub(crate) fn rational_to_f64(q: &BigRational) -> f64 {
    // scale so both parts fit comfortably in f64 before dividing
    let nb = q.numer().bits() as i64;
    let db = q.denom().bits() as i64;
    let shift = (nb.max(db) - 1000).max(0) as usize;
    let num = (q.numer() >> shift).to_f64().unwrap_or(f64::NAN);
    let den = (q.denom() >> shift).to_f64().unwrap_or(f64::NAN);
    if shift == 0 || den != 0.0 {
        num / den
    } else {
        q.to_f64().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(1).unwrap(), q(1, 1));
        assert_eq!(harmonic(4).unwrap(), q(25, 12));
        assert_eq!(harmonic(5).unwrap(), q(137, 60));
        assert!(harmonic(0).is_err());
    }

    #[test]
    fn harmonic_tracks_log() {
        for n in [100u64, 1000, 5000] {
            let h = rational_to_f64(&harmonic(n).unwrap());
            let gap = (h - (n as f64).ln() - 0.577_215_664_9).abs();
            assert!(gap < 1.0 / (2.0 * n as f64) + 1e-3);
        }
    }

    #[test]
    fn mean_values() {
        assert_eq!(exact_mean(0), q(0, 1));
        assert_eq!(exact_mean(1), q(0, 1));
        assert_eq!(exact_mean(2), q(1, 1));
        assert_eq!(exact_mean(3), q(8, 3));
        assert_eq!(exact_mean(4), q(29, 6));
        assert_eq!(exact_mean(4), q(10, 1) * harmonic(4).unwrap() - q(16, 1));
    }

    #[test]
    fn closed_form_table() {
        let c = closed_form_means(200);
        for n in [0usize, 1, 2, 3, 4, 57, 200] {
            assert_eq!(c[n], exact_mean(n as u64), "n = {n}");
        }
    }

    #[test]
    fn recurrence_matches_closed_form() {
        let rec = mean_by_recurrence(300);
        for (n, m) in rec.iter().enumerate() {
            assert_eq!(*m, exact_mean(n as u64), "n = {n}");
        }
        assert!(
            (mean_f64(300) - rational_to_f64(&rec[300])).abs() < 1e-9 * rational_to_f64(&rec[300])
        );
    }

    #[test]
    fn small_table() {
        let t = exact_variance_table(4).unwrap();
        assert_eq!(t.rows.len(), 5);
        assert_eq!(t.row(2).unwrap().variance, MomentValue::Exact(q(0, 1)));
        assert_eq!(t.row(3).unwrap().variance, MomentValue::Exact(q(2, 9)));
        assert_eq!(t.row(3).unwrap().mean, MomentValue::Exact(q(8, 3)));
        let csv = t.to_csv_string();
        assert!(csv.starts_with("n,mean,variance\n0,0,0\n1,0,0\n2,1,0\n"));
        assert!(csv.contains("\n3,8/3,2/9\n"));
        assert!(exact_variance_table(0).is_err());
    }

    #[test]
    fn float_path_continues_exact_path() {
        let exact = moment_table(120, 120).unwrap();
        let mixed = moment_table(120, 60).unwrap();
        for n in 61..=120u64 {
            let a = exact.row(n).unwrap();
            let b = mixed.row(n).unwrap();
            assert!(matches!(b.variance, MomentValue::Approx(_)));
            let va = a.variance.to_f64();
            assert!((va - b.variance.to_f64()).abs() < 1e-10 * va, "n = {n}");
            assert!((a.mean.to_f64() - b.mean.to_f64()).abs() < 1e-10 * a.mean.to_f64());
        }
    }

    #[test]
    fn table_matches_enumeration() {
        let t = exact_variance_table(8).unwrap();
        for n in 0..=8usize {
            let (m, v) = enumerated_moments(n).unwrap();
            let row = t.row(n as u64).unwrap();
            assert_eq!(row.mean.as_exact(), Some(&m), "n = {n}");
            assert_eq!(row.variance.as_exact(), Some(&v), "n = {n}");
        }
        assert_eq!(enumerate_comparisons(4).unwrap().len(), 24);
        assert!(enumerate_comparisons(11).is_err());
    }

    #[test]
    fn variance_at_thousand() {
        // the O(log n / n) correction is still about -0.011 at n = 1000
        let t = exact_variance_table(1000).unwrap();
        let v = t.row(1000).unwrap().variance.to_f64() / 1e6;
        assert!((v - crate::toll::VAR_Z).abs() < 0.0125, "{v}");
    }
}
