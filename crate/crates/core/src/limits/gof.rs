//! Goodness-of-fit tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Smallest expected count per chi-square cell.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    #[serde(rename = "ks")]
    Ks,
    #[serde(rename = "chi-square")]
    ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoFReport {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub n_samples: usize,
    /// `rayleigh`, `bessel3-marginal(x,t)` or a free-form label.
    pub target: String,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form, converges fast for small λ
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..8).map(|k| y.powi((2 * k + 1) * (2 * k + 1))).sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Largest gap `sup |F_n − F|` between the empirical CDF of `samples` and
/// `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0, |d: f64, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    }))
}

/// One-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' finite-n correction of `λ`).
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64, target: &str) -> Result<GoFReport> {
    let d = ks_statistic(samples, cdf)?;
    let n = samples.len() as f64;
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok(GoFReport {
        test: TestKind::Ks,
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        n_samples: samples.len(),
        target: target.to_string(),
    })
}

/// Pearson chi-square with `df = cells − 1`.
pub fn chi_square_test(observed: &[f64], expected: &[f64], target: &str) -> Result<GoFReport> {
    if observed.is_empty() || observed.len() != expected.len() {
        return Err(Error::InvalidArgument("observed and expected need the same nonzero length".into()));
    }
    if let Some((cell, &e)) = expected.iter().enumerate().find(|(_, &e)| e < MIN_EXPECTED) {
        return Err(Error::SparseCells { cell, expected: e });
    }
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let n = observed.iter().sum::<f64>().round() as usize;
    Ok(GoFReport {
        test: TestKind::ChiSquare,
        statistic: stat,
        p_value: chi_square_sf(stat, observed.len() - 1),
        n_samples: n,
        target: target.to_string(),
    })
}

fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("positive degrees of freedom").sf(stat).clamp(0.0, 1.0)
}

/// Two-sample chi-square over the values taken by `a` and `b`. Adjacent
/// values are pooled (in key order) until every cell has an expected count
/// of at least [`MIN_EXPECTED`] in both samples.
pub fn two_sample_chi_square<K: Ord + Clone>(a: &[K], b: &[K], target: &str) -> Result<GoFReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut counts: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    for k in a {
        counts.entry(k.clone()).or_default().0 += 1.0;
    }
    for k in b {
        counts.entry(k.clone()).or_default().1 += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let expected_ok = |ca: f64, cb: f64| {
        let total = ca + cb;
        total * na / (na + nb) >= MIN_EXPECTED && total * nb / (na + nb) >= MIN_EXPECTED
    };
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (_, (ca, cb)) in counts {
        acc.0 += ca;
        acc.1 += cb;
        if expected_ok(acc.0, acc.1) {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    let (k1, k2) = ((nb / na).sqrt(), (na / nb).sqrt());
    let stat: f64 = cells.iter().map(|(ca, cb)| (k1 * ca - k2 * cb).powi(2) / (ca + cb)).sum();
    Ok(GoFReport {
        test: TestKind::ChiSquare,
        statistic: stat,
        p_value: chi_square_sf(stat, cells.len() - 1),
        n_samples: a.len() + b.len(),
        target: target.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn kolmogorov_tail_values() {
        // classical critical values
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 2e-4);
        assert!((kolmogorov_sf(0.828) - 0.5).abs() < 2e-3);
        // the two series agree where they meet
        let a = kolmogorov_sf(1.1799999);
        let b = kolmogorov_sf(1.18);
        assert!((a - b).abs() < 1e-6);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        assert!(kolmogorov_sf(10.0) < 1e-80);
    }

    #[test]
    fn ks_calibration_on_uniforms() {
        let mut rng = StreamKey::new(1, 2).rng(0);
        let samples: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let r = ks_test(&samples, |x| x.clamp(0.0, 1.0), "uniform").unwrap();
        assert!(r.p_value > 0.001);
        let shifted: Vec<f64> = samples.iter().map(|x| x * 0.95).collect();
        assert!(ks_test(&shifted, |x| x.clamp(0.0, 1.0), "uniform").unwrap().p_value < 1e-6);
        assert!(matches!(ks_test(&[], |x| x, "x"), Err(Error::EmptySample)));
    }

    #[test]
    fn ks_statistic_small_case() {
        // samples 0.1, 0.5 against U(0,1): gaps max(0.1, 0.4, 0.0, 0.5) = 0.5
        let d = ks_statistic(&[0.5, 0.1], |x| x).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_square_edges() {
        let r = chi_square_test(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0], "x").unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = chi_square_test(&[60.0, 0.0, 0.0], &[20.0, 20.0, 20.0], "x").unwrap();
        assert!(r.p_value < 1e-6);
        assert!(matches!(chi_square_test(&[1.0, 2.0], &[1.0, 2.0], "x"), Err(Error::SparseCells { cell: 0, .. })));
    }

    #[test]
    fn two_sample_pools_and_detects() {
        let key = StreamKey::new(3, 4);
        let mut r1 = key.rng(0);
        let mut r2 = key.rng(1);
        let a: Vec<i64> = (0..20_000).map(|_| r1.random_range(0..30)).collect();
        let b: Vec<i64> = (0..10_000).map(|_| r2.random_range(0..30)).collect();
        assert!(two_sample_chi_square(&a, &b, "x").unwrap().p_value > 0.001);
        let c: Vec<i64> = (0..10_000).map(|_| r2.random_range(0..29)).collect();
        assert!(two_sample_chi_square(&a, &c, "x").unwrap().p_value < 1e-6);
        let same = two_sample_chi_square(&[1, 1, 2, 2], &[1, 1, 2, 2], "x").unwrap();
        assert_eq!(same.statistic, 0.0);
    }
}
