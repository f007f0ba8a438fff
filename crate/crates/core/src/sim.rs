//! Monte Carlo sampling of the comparison count `X_n`, of `Z_n`, and of the
//! truncated fixed-point tree `Z^(d)`.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`; sample `i`
//! uses ChaCha stream `i`, so every sample owns an independent substream and
//! the output does not depend on how samples are scheduled across threads.

use std::io::{Read, Write};
use std::sync::OnceLock;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::moments;
use crate::toll::toll_interior;

/// Subproblems of at most this size are drawn from their exact law.
pub const DEFAULT_LEAF_SIZE: usize = 64;

/// Default cap on `count * n` (respectively `count * 2^depth`).
pub const DEFAULT_BUDGET: u64 = 400_000_000_000;

pub const SAMPLE_MAGIC: &[u8; 4] = b"QSZS";
pub const SAMPLE_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub n: u64,
    pub count: u64,
    pub seed: u64,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    pub leaf_size: usize,
    pub budget: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            leaf_size: DEFAULT_LEAF_SIZE,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Generator for sample `index` of a run seeded with `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Exact laws of `X_m` for `m <= leaf`, stored as CDFs over their support.
struct SmallLaws {
    // per m: (smallest support point, cumulative probabilities)
    laws: Vec<(u64, Vec<f64>)>,
}

impl SmallLaws {
    fn build(leaf: usize) -> Self {
        let mut pmfs: Vec<Vec<f64>> = vec![vec![1.0], vec![1.0]];
        for m in 2..=leaf {
            let len = m * (m - 1) / 2 + 1;
            let mut p = vec![0.0; len];
            for k in 1..=m {
                let (a, b) = (&pmfs[k - 1], &pmfs[m - k]);
                for (i, &pa) in a.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    for (j, &pb) in b.iter().enumerate() {
                        p[i + j + m - 1] += pa * pb;
                    }
                }
            }
            let inv = 1.0 / m as f64;
            p.iter_mut().for_each(|x| *x *= inv);
            pmfs.push(p);
        }
        let laws = pmfs
            .into_iter()
            .map(|p| {
                let lo = p.iter().position(|&x| x > 0.0).unwrap_or(0);
                let hi = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
                let mut acc = 0.0;
                let cdf = p[lo..=hi]
                    .iter()
                    .map(|&x| {
                        acc += x;
                        acc
                    })
                    .collect();
                (lo as u64, cdf)
            })
            .collect();
        SmallLaws { laws }
    }

    #[inline]
    fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> u64 {
        let (lo, cdf) = &self.laws[m];
        if cdf.len() == 1 {
            return *lo;
        }
        let u = rng.gen::<f64>() * cdf[cdf.len() - 1];
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        lo + idx as u64
    }
}

fn small_laws(leaf: usize) -> &'static SmallLaws {
    static DEFAULT: OnceLock<SmallLaws> = OnceLock::new();
    static OTHER: OnceLock<std::sync::Mutex<Vec<(usize, &'static SmallLaws)>>> = OnceLock::new();
    if leaf == DEFAULT_LEAF_SIZE {
        return DEFAULT.get_or_init(|| SmallLaws::build(DEFAULT_LEAF_SIZE));
    }
    let cache = OTHER.get_or_init(Default::default);
    let mut guard = cache.lock().expect("law cache poisoned");
    if let Some((_, laws)) = guard.iter().find(|(l, _)| *l == leaf) {
        return laws;
    }
    let laws: &'static SmallLaws = Box::leak(Box::new(SmallLaws::build(leaf)));
    guard.push((leaf, laws));
    laws
}

/// Exact probability mass function of `X_m` for `m <= max_m` (index = count).
pub fn small_pmfs(max_m: usize) -> Vec<Vec<f64>> {
    let laws = SmallLaws::build(max_m.max(1));
    laws.laws
        .iter()
        .map(|(lo, cdf)| {
            let mut p = vec![0.0; *lo as usize];
            let mut prev = 0.0;
            for &c in cdf {
                p.push(c - prev);
                prev = c;
            }
            p
        })
        .collect()
}

/// One draw of `X_n` from the pivot recurrence `X_n = X_{U-1} + X*_{n-U} + n - 1`.
pub fn simulate_xn<R: Rng + ?Sized>(n: u64, rng: &mut R) -> u64 {
    simulate_xn_with(n, rng, DEFAULT_LEAF_SIZE)
}

/// As [`simulate_xn`], drawing subproblems of size `<= leaf_size` from their
/// exact law; `leaf_size <= 2` recurses all the way down.
pub fn simulate_xn_with<R: Rng + ?Sized>(n: u64, rng: &mut R, leaf_size: usize) -> u64 {
    let leaf = leaf_size.max(2) as u64;
    let laws = if leaf > 2 {
        Some(small_laws(leaf as usize))
    } else {
        None
    };
    let mut total = 0u64;
    // smaller half is pushed last, so the stack stays O(log n) deep
    let mut stack: Vec<u64> = Vec::with_capacity(64);
    stack.push(n);
    while let Some(m) = stack.pop() {
        if m <= 2 {
            total += m.saturating_sub(1);
            continue;
        }
        if m <= leaf {
            if let Some(laws) = laws {
                total += laws.sample(m as usize, rng);
                continue;
            }
        }
        let k = rng.gen_range(1..=m);
        total += m - 1;
        let (left, right) = (k - 1, m - k);
        let (small, large) = if left <= right {
            (left, right)
        } else {
            (right, left)
        };
        stack.push(large);
        stack.push(small);
    }
    total
}

fn centered_mean(n: u64) -> f64 {
    if n as usize <= moments::DEFAULT_EXACT_CAP {
        moments::rational_to_f64(&moments::exact_mean(n))
    } else {
        moments::mean_f64(n)
    }
}

/// `count` draws of `Z_n = (X_n - E X_n) / n`, deterministic in `seed`.
pub fn sample_zn(n: u64, count: u64, seed: u64) -> Result<SampleSet> {
    sample_zn_with(n, count, seed, &SimConfig::default())
}

pub fn sample_zn_with(n: u64, count: u64, seed: u64, cfg: &SimConfig) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::domain(format!("sample_zn needs n >= 2, got {n}")));
    }
    if count == 0 {
        return Err(Error::domain("sample count must be positive"));
    }
    let work = count.saturating_mul(n);
    if work > cfg.budget {
        return Err(Error::Resource(format!(
            "count * n = {work} exceeds budget {}",
            cfg.budget
        )));
    }
    let mu = centered_mean(n);
    let nf = n as f64;
    let leaf = cfg.leaf_size;
    let values = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            (simulate_xn_with(n, &mut rng, leaf) as f64 - mu) / nf
        })
        .collect();
    Ok(SampleSet {
        n,
        count,
        seed,
        values,
    })
}

/// Fraction of samples `<= x`.
pub fn empirical_cdf(samples: &SampleSet, x: f64) -> f64 {
    let below = samples.values.iter().filter(|&&v| v <= x).count();
    below as f64 / samples.values.len() as f64
}

pub const MAX_TREE_DEPTH: u32 = 24;

/// Samples of `Z^(depth)`: `Z^(0) = 0`, `Z^(d) = U Z^(d-1) + (1-U) Z*^(d-1) + g(U)`.
///
/// Uniforms are consumed level by level (breadth first), so the first
/// `2^d - 1` draws of a substream are the tree of `Z^(d)`; runs at different
/// depths with the same seed are therefore coupled.
pub fn fixed_point_iterate_samples(depth: u32, count: u64, seed: u64) -> Result<SampleSet> {
    fixed_point_iterate_samples_with(depth, count, seed, DEFAULT_BUDGET)
}

pub fn fixed_point_iterate_samples_with(
    depth: u32,
    count: u64,
    seed: u64,
    budget: u64,
) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::domain("sample count must be positive"));
    }
    if depth > MAX_TREE_DEPTH {
        return Err(Error::Resource(format!(
            "tree depth {depth} exceeds {MAX_TREE_DEPTH}"
        )));
    }
    let work = count.saturating_mul(1u64 << depth);
    if work > budget {
        return Err(Error::Resource(format!(
            "count * 2^depth = {work} exceeds budget {budget}"
        )));
    }
    let values = (0..count)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(level, next): &mut (Vec<f64>, Vec<f64>), i| {
                let mut rng = substream(seed, i);
                tree_sample(depth, &mut rng, level, next)
            },
        )
        .collect();
    Ok(SampleSet {
        n: 0,
        count,
        seed,
        values,
    })
}

fn tree_sample<R: Rng>(depth: u32, rng: &mut R, level: &mut Vec<f64>, next: &mut Vec<f64>) -> f64 {
    level.clear();
    level.push(1.0);
    let mut acc = 0.0;
    for d in 0..depth {
        let last = d + 1 == depth;
        next.clear();
        for &w in level.iter() {
            let u: f64 = rng.sample(Open01);
            acc += w * toll_interior(u);
            if !last {
                next.push(w * u);
                next.push(w * (1.0 - u));
            }
        }
        std::mem::swap(level, next);
    }
    acc
}

impl SampleSet {
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = [0u8; 16];
        header[..4].copy_from_slice(SAMPLE_MAGIC);
        header[4..6].copy_from_slice(&SAMPLE_VERSION.to_le_bytes());
        w.write_all(&header)?;
        w.write_all(&self.n.to_le_bytes())?;
        w.write_all(&self.count.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != SAMPLE_MAGIC {
            return Err(Error::Format("bad sample-file magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != SAMPLE_VERSION {
            return Err(Error::Format(format!(
                "unsupported sample-file version {version}"
            )));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n = next_u64(&mut r)?;
        let count = next_u64(&mut r)?;
        let seed = next_u64(&mut r)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() as u64 != count.saturating_mul(8) {
            return Err(Error::Format(format!(
                "expected {count} samples, found {} bytes",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(SampleSet {
            n,
            count,
            seed,
            values,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", i, crate::report::fmt_f64(*v))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn trivial_sizes() {
        let mut rng = substream(1, 0);
        assert_eq!(simulate_xn(0, &mut rng), 0);
        assert_eq!(simulate_xn(1, &mut rng), 0);
        for _ in 0..100 {
            assert_eq!(simulate_xn(2, &mut rng), 1);
        }
    }

    #[test]
    fn three_elements_law() {
        for leaf in [0, DEFAULT_LEAF_SIZE] {
            let mut rng = substream(11, 0);
            let draws = 1_000_000;
            let mut twos = 0u32;
            for _ in 0..draws {
                match simulate_xn_with(3, &mut rng, leaf) {
                    2 => twos += 1,
                    3 => {}
                    other => panic!("X_3 = {other}"),
                }
            }
            let frac = twos as f64 / draws as f64;
            assert!((frac - 1.0 / 3.0).abs() < 0.005, "leaf {leaf}: {frac}");
        }
    }

    #[test]
    fn small_laws_match_enumeration() {
        let pmfs = small_pmfs(8);
        for n in 0..=8 {
            let counts = moments::enumerate_comparisons(n).unwrap();
            let total = counts.len() as f64;
            let max = *counts.iter().max().unwrap() as usize;
            let mut freq = vec![0.0; max + 1];
            for c in counts {
                freq[c as usize] += 1.0 / total;
            }
            for (c, &p) in pmfs[n].iter().enumerate() {
                let want = freq.get(c).copied().unwrap_or(0.0);
                assert!((p - want).abs() < 1e-14, "n = {n}, c = {c}");
            }
        }
    }

    #[test]
    fn leaf_tables_do_not_change_the_law() {
        let n = 500;
        let draws = 40_000;
        let a: Vec<f64> = (0..draws)
            .map(|i| simulate_xn_with(n, &mut substream(5, i), 0) as f64)
            .collect();
        let b: Vec<f64> = (0..draws)
            .map(|i| simulate_xn_with(n, &mut substream(6, i), DEFAULT_LEAF_SIZE) as f64)
            .collect();
        // 99.9% two-sample critical value is about 1.95 * sqrt(2 / draws)
        assert!(stats::ks_two_sample(&a, &b) < 1.95 * (2.0 / draws as f64).sqrt());
    }

    #[test]
    fn zn_deterministic_n2() {
        let s = sample_zn(2, 5, 99).unwrap();
        assert_eq!(s.values, vec![0.0; 5]);
        assert!(sample_zn(1, 5, 99).is_err());
        assert!(sample_zn(10, 0, 99).is_err());
    }

    #[test]
    fn zn_reproducible() {
        let a = sample_zn(1000, 200, 42).unwrap();
        let b = sample_zn(1000, 200, 42).unwrap();
        let c = sample_zn(1000, 200, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        assert_eq!(a.values.len(), 200);
        assert!(a.values.iter().all(|&z| z > -3.0));
    }

    #[test]
    fn budget_guard() {
        let cfg = SimConfig {
            budget: 1000,
            ..SimConfig::default()
        };
        assert!(matches!(
            sample_zn_with(100, 11, 1, &cfg),
            Err(Error::Resource(_))
        ));
        assert!(sample_zn_with(100, 10, 1, &cfg).is_ok());
        assert!(matches!(
            fixed_point_iterate_samples(25, 1, 1),
            Err(Error::Resource(_))
        ));
        assert!(matches!(
            fixed_point_iterate_samples_with(10, 10, 1, 1000),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn simulated_moments_match_exact() {
        let table = moments::exact_variance_table(1000).unwrap();
        for n in [10u64, 100, 1000] {
            let draws = 100_000u64;
            let xs: Vec<f64> = (0..draws)
                .map(|i| simulate_xn(n, &mut substream(2024 + n, i)) as f64)
                .collect();
            let row = table.row(n).unwrap();
            let (mu, var) = (row.mean.to_f64(), row.variance.to_f64());
            let m = stats::mean(&xs);
            let v = stats::variance(&xs);
            let se_mean = (var / draws as f64).sqrt();
            assert!((m - mu).abs() < 4.0 * se_mean, "n = {n}: mean {m} vs {mu}");
            // SE of the sample variance from the fourth central moment
            let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / draws as f64;
            let se_var = ((m4 - v * v) / draws as f64).sqrt();
            assert!((v - var).abs() < 4.0 * se_var, "n = {n}: var {v} vs {var}");
        }
    }

    #[test]
    fn ecdf_edges() {
        let s = sample_zn(20_000, 101, 3).unwrap();
        let lo = s.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(empirical_cdf(&s, lo - 1.0), 0.0);
        assert_eq!(empirical_cdf(&s, hi + 1.0), 1.0);
        let mut sorted = s.values.clone();
        sorted.sort_by(f64::total_cmp);
        let med = sorted[50];
        assert!((empirical_cdf(&s, med) - 0.5).abs() <= 1.0 / 101.0 + 1e-12);
    }

    #[test]
    fn tree_low_depths() {
        let s0 = fixed_point_iterate_samples(0, 10, 1).unwrap();
        assert!(s0.values.iter().all(|&v| v == 0.0));
        let s1 = fixed_point_iterate_samples(1, 1000, 1).unwrap();
        let lo = crate::toll::TOLL_MIN;
        assert!(s1.values.iter().all(|&v| v >= lo && v < 1.0));
    }

    #[test]
    fn tree_variance_depth_14() {
        let s = fixed_point_iterate_samples(14, 10_000, 77).unwrap();
        let v = stats::variance(&s.values);
        assert!((v - crate::toll::VAR_Z).abs() < 0.02, "{v}");
        assert!(stats::mean(&s.values).abs() < 4.0 * (0.42f64 / 1e4).sqrt());
    }

    #[test]
    fn tree_ks_shrinks_with_depth() {
        let count = 20_000;
        let ks: Vec<f64> = [4u32, 6, 8, 10]
            .iter()
            .map(|&d| {
                let a = fixed_point_iterate_samples(d, count, 5).unwrap();
                let b = fixed_point_iterate_samples(d + 2, count, 5).unwrap();
                stats::ks_two_sample(&a.values, &b.values)
            })
            .collect();
        assert!(ks.windows(2).all(|w| w[1] < w[0]), "{ks:?}");
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let s = sample_zn(50, 7, 9).unwrap();
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 24 + 7 * 8);
        assert_eq!(&buf[..4], b"QSZS");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 50);
        assert_eq!(u64::from_le_bytes(buf[32..40].try_into().unwrap()), 9);
        assert_eq!(SampleSet::read_binary(&buf[..]).unwrap(), s);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SampleSet::read_binary(&bad[..]).is_err());
        assert!(SampleSet::read_binary(&buf[..buf.len() - 8]).is_err());
    }

    #[test]
    fn csv_export() {
        let s = sample_zn(2, 2, 0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,value\n0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
