//! Limit laws and Brownian oracles for them.
//!
//! Bessel-3 marginals. Brownian motion from `x > 0` killed at 0 has time-`t`
//! density `φ_t(z − x) − φ_t(z + x)` on `z > 0` (reflection principle).
//! Reweighting by the harmonic function `V(z) = z` and dividing by
//! `V(x) = x` gives the Bessel-3 density
//!
//! ```text
//! p_t(x, z) = (z/x)·(φ_t(z − x) − φ_t(z + x))
//! ```
//!
//! and letting `x → 0` gives `√(2/π)·z²·e^{−z²/2}` at `t = 1`. Integrating
//! `w·φ(w ∓ x)` by parts yields the CDFs used below.

use std::f64::consts::{FRAC_2_PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::erf::erf;

use crate::rng::StreamKey;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / SQRT_2))
}

/// `1 − e^{−u²/2}` for `u ≥ 0`.
pub fn rayleigh_cdf(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        -(-0.5 * u * u).exp_m1()
    }
}

pub fn rayleigh_density(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        u * (-0.5 * u * u).exp()
    }
}

/// Density of the Bessel-3 process started at `x ≥ 0`, at time 1.
pub fn bessel3_density(x: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        FRAC_2_PI.sqrt() * z * z * (-0.5 * z * z).exp()
    } else {
        z / x * (normal_pdf(z - x) - normal_pdf(z + x))
    }
}

/// CDF of the Bessel-3 process started at `x ≥ 0`, at time 1.
pub fn bessel3_cdf(x: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    let f = if x == 0.0 {
        erf(z / SQRT_2) - FRAC_2_PI.sqrt() * z * (-0.5 * z * z).exp()
    } else {
        (normal_pdf(z + x) - normal_pdf(z - x)) / x + normal_cdf(z - x) + normal_cdf(z + x) - 1.0
    };
    f.clamp(0.0, 1.0)
}

/// Bessel-3 marginal at time `t` from `x`, by Brownian scaling.
pub fn bessel3_cdf_at(x: f64, t: f64, z: f64) -> f64 {
    let s = t.sqrt();
    bessel3_cdf(x / s, z / s)
}

/// Time-1 Bessel-3 values from `x` sampled from Brownian motion.
///
/// For `x = 0` this is the norm of a standard Gaussian vector in ℝ³. For
/// `x > 0` the endpoint `W₁ ~ N(x, 1)` is kept when positive and when the
/// Brownian bridge from `x` to `W₁` avoids 0, which happens with
/// probability `1 − e^{−2xW₁}`; the survivor is then kept with probability
/// `W₁/cap` to apply the weight `V(W₁) = W₁`. Values above `cap = x + 10`
/// have probability below 1e-20 and are dropped.
pub fn brownian_bessel3_samples(x: f64, n_samples: usize, key: StreamKey) -> Vec<f64> {
    assert!(x >= 0.0, "start must be nonnegative");
    let cap = x + 10.0;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.rng(i);
            let g = |rng: &mut _| -> f64 { StandardNormal.sample(rng) };
            if x == 0.0 {
                let (a, b, c) = (g(&mut rng), g(&mut rng), g(&mut rng));
                return (a * a + b * b + c * c).sqrt();
            }
            loop {
                let w = x + g(&mut rng);
                if w <= 0.0 || w > cap {
                    continue;
                }
                let survive = -(-2.0 * x * w).exp_m1();
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                if u < survive && v < w / cap {
                    return w;
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limits::gof::ks_statistic;

    fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        // composite Simpson
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn rayleigh_values() {
        assert!((rayleigh_cdf(1.0) - 0.393469).abs() < 1e-6);
        assert_eq!(rayleigh_cdf(-1.0), 0.0);
        assert!((integrate(rayleigh_density, 0.0, 1.7) - rayleigh_cdf(1.7)).abs() < 1e-10);
    }

    #[test]
    fn bessel_cdfs_integrate_densities() {
        for x in [0.0, 0.3, 1.0, 2.5] {
            for z in [0.2, 1.0, 1.4142, 3.0, 6.0] {
                let num = integrate(|w| bessel3_density(x, w), 0.0, z);
                assert!((num - bessel3_cdf(x, z)).abs() < 1e-9, "x {x} z {z}");
            }
            assert!((bessel3_cdf(x, 40.0) - 1.0).abs() < 1e-12);
        }
        // x → 0 limit is continuous
        assert!((bessel3_cdf(1e-6, 1.3) - bessel3_cdf(0.0, 1.3)).abs() < 1e-8);
    }

    #[test]
    fn bessel_zero_mode() {
        // d/dz z²e^{−z²/2} = z(2 − z²)e^{−z²/2} vanishes at √2
        let m = SQRT_2;
        let d = |z: f64| bessel3_density(0.0, z);
        assert!(d(m) > d(m - 1e-4) && d(m) > d(m + 1e-4));
    }

    #[test]
    fn brownian_oracle_agrees() {
        for (x, seed) in [(0.0, 1u64), (1.0, 2)] {
            let s = brownian_bessel3_samples(x, 200_000, StreamKey::new(seed, 0));
            let d = ks_statistic(&s, |z| bessel3_cdf(x, z)).unwrap();
            assert!(d < 0.005, "x {x}: {d}");
        }
    }
}
