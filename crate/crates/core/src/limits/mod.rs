//! Statistical checks of the limit theorems and exact checks of the
//! finite-`n` inequalities.

pub mod distributions;
pub mod gof;

use std::f64::consts::SQRT_2;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioned::{HTransformSampler, MeanderSampler};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::harmonic::compute_un_exact;
use crate::lattice::{evolve, evolve_visit, FreeDistribution};
use crate::rng::StreamKey;
use crate::utable::{build_utable, default_ceiling};

pub use distributions::{bessel3_cdf, bessel3_density, brownian_bessel3_samples, rayleigh_cdf};
pub use gof::{chi_square_test, ks_test, two_sample_chi_square, GoFReport, TestKind};

/// Spreads lattice-valued samples uniformly over their cells so that a KS
/// test against a continuous law sees no ties: each value moves by
/// `(U − 1/2)·width` with `U` uniform.
pub fn jitter(samples: &mut [f64], width: f64, key: StreamKey) {
    let mut rng = key.rng(0);
    for s in samples {
        *s += (rng.random::<f64>() - 0.5) * width;
    }
}

/// Meander endpoints `S_N/(√N σ)` against the Rayleigh CDF.
pub fn rayleigh_clt_test(env: &Environment, n: usize, n_samples: usize, key: StreamKey) -> Result<GoFReport> {
    let sampler = MeanderSampler::new(env, n, 0.0)?;
    let mut ends = sampler.endpoints(n_samples, key)?;
    let width = env.support_span(n)? as f64 * env.lattice()?.unit;
    jitter(&mut ends, width, key.child("jitter"));
    let scale = (n as f64).sqrt() * env.model().sigma();
    let scaled: Vec<f64> = ends.iter().map(|e| e / scale).collect();
    ks_test(&scaled, rayleigh_cdf, "rayleigh")
}

/// Parameters of [`bessel_marginal_test`] beyond the required ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselOptions {
    /// Steps beyond `N` used for the harmonic table.
    pub horizon: usize,
}

impl Default for BesselOptions {
    fn default() -> Self {
        BesselOptions { horizon: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesselReport {
    pub gof: GoFReport,
    /// Lattice start `y ≈ x√N σ`.
    pub y: f64,
    /// `y/(√N σ)`, the start the target law uses.
    pub x_effective: f64,
    pub ceiling_gap: f64,
}

/// h-transform endpoints `S_N/(√N σ)` from `y ≈ x√N σ` against the Bessel-3
/// time-1 marginal.
pub fn bessel_marginal_test(
    env: &Environment,
    x: f64,
    n: usize,
    n_samples: usize,
    key: StreamKey,
    options: BesselOptions,
) -> Result<BesselReport> {
    if !(x >= 0.0) || n == 0 {
        return Err(Error::InvalidArgument("bessel marginal needs x ≥ 0 and N ≥ 1".into()));
    }
    let unit = env.lattice()?.unit;
    let scale = (n as f64).sqrt() * env.model().sigma();
    let z0 = (x * scale / unit).round() as i64;
    let y = z0 as f64 * unit;
    let x_effective = y / scale;
    let ceiling = default_ceiling(env, z0, n, options.horizon)?;
    let table = build_utable(env, n, ceiling, options.horizon)?;
    let sampler = HTransformSampler::new(env, &table, n)?;
    let mut ends = sampler.endpoints(y, n_samples, key)?;
    jitter(&mut ends, env.support_span(n)? as f64 * unit, key.child("jitter"));
    let scaled: Vec<f64> = ends.iter().map(|e| e / scale).collect();
    let gof = ks_test(&scaled, |z| bessel3_cdf(x_effective, z), &format!("bessel3-marginal({x},1)"))?;
    Ok(BesselReport { gof, y, x_effective, ceiling_gap: table.ceiling_gap })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: usize,
    pub exact: f64,
    pub predicted: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRatioReport {
    pub y: f64,
    pub u: f64,
    pub sigma: f64,
    pub rows: Vec<RatioRow>,
}

impl AsymptoticRatioReport {
    pub fn final_ratio(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.ratio)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,exact,predicted,ratio")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.n, r.exact, r.predicted, r.ratio)?;
        }
        Ok(())
    }
}

fn check_increasing(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() || n_list[0] == 0 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("n_list must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// Exact `P_ξ(τ_y > n)` against `√2·U(ξ, y)/(√(πn)·σ)`, with `U` taken at
/// the given DP horizon.
pub fn survival_asymptotics_report(
    env: &Environment,
    y: f64,
    n_list: &[usize],
    u_horizon: usize,
) -> Result<AsymptoticRatioReport> {
    check_increasing(n_list)?;
    let z = env.to_units(y)?;
    let u = compute_un_exact(env, y, u_horizon)?;
    let sigma = env.model().sigma();
    let last = *n_list.last().expect("nonempty");
    let mut exact = Vec::with_capacity(n_list.len());
    let mut next = 0;
    evolve_visit::<f64>(env, z, last, |d| {
        if next < n_list.len() && d.time() == n_list[next] {
            exact.push(d.alive_total());
            next += 1;
        }
    })?;
    let rows = n_list
        .iter()
        .zip(exact)
        .map(|(&n, p)| {
            let predicted = SQRT_2 * u / ((std::f64::consts::PI * n as f64).sqrt() * sigma);
            RatioRow { n, exact: p, predicted, ratio: p / predicted }
        })
        .collect();
    Ok(AsymptoticRatioReport { y, u, sigma, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkgPoint {
    pub x: f64,
    /// `P(y + S_n > x, τ_y > n)`.
    pub joint: f64,
    /// `P(y + S_n > x)·P(τ_y > n)`.
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkgReport {
    pub y: f64,
    pub n: usize,
    pub points: Vec<FkgPoint>,
    /// `min (joint − product)` over the grid.
    pub worst_slack: f64,
}

/// Both sides of `P(S_n > x, τ_y > n) ≥ P(S_n > x)·P(τ_y > n)` from the
/// killed and the free DP. Without `x_grid` the grid is every lattice
/// point from one below the smallest reachable value of `y + S_n` to the
/// largest.
pub fn fkg_check(env: &Environment, y: f64, n: usize, x_grid: Option<&[f64]>) -> Result<FkgReport> {
    let z = env.to_units(y)?;
    let unit = env.lattice()?.unit;
    let killed = evolve::<f64>(env, z, n)?;
    let mut free = FreeDistribution::<f64>::point_mass(z);
    for law in env.lattice_laws(n)? {
        free = free.step_lattice(law);
    }
    let survival = killed.alive_total();
    let grid: Vec<i64> = match x_grid {
        Some(g) => g.iter().map(|&x| (x / unit).floor() as i64).collect(),
        None => {
            let (lo, hi) = free.range();
            (lo - 1..=hi).collect()
        }
    };
    let points: Vec<FkgPoint> = grid
        .iter()
        .map(|&x| FkgPoint { x: x as f64 * unit, joint: killed.alive_above(x), product: free.above(x) * survival })
        .collect();
    let worst_slack = points.iter().map(|p| p.joint - p.product).fold(f64::INFINITY, f64::min);
    Ok(FkgReport { y, n, points, worst_slack })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub n: usize,
    /// `P(τ_y > n)`.
    pub survival: f64,
    /// `3·E(y + S_n; τ_y > n)/(√n σ)`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub y: f64,
    pub rows: Vec<LemmaRow>,
    /// First tested `n` from which the bound holds at every later tested `n`.
    pub n1: Option<usize>,
    /// First tested `n` at which the bound holds.
    pub first_hold: Option<usize>,
    /// The bound holds at every tested `n ≥ first_hold`.
    pub holds_after_first: bool,
}

/// `P(τ_y > n) < 3·E(y + S_n; τ_y > n)/(√n σ)` along `n_list`.
pub fn lemma_bound_check(env: &Environment, y: f64, n_list: &[usize]) -> Result<LemmaReport> {
    check_increasing(n_list)?;
    let z = env.to_units(y)?;
    let unit = env.lattice()?.unit;
    let sigma = env.model().sigma();
    let last = *n_list.last().expect("nonempty");
    let mut rows = Vec::with_capacity(n_list.len());
    let mut next = 0;
    evolve_visit::<f64>(env, z, last, |d| {
        if next < n_list.len() && d.time() == n_list[next] {
            let n = n_list[next];
            let survival = d.alive_total();
            let bound = 3.0 * d.alive_first_moment() * unit / ((n as f64).sqrt() * sigma);
            rows.push(LemmaRow { n, survival, bound, holds: survival < bound });
            next += 1;
        }
    })?;
    let first_hold = rows.iter().find(|r| r.holds).map(|r| r.n);
    let holds_after_first = match first_hold {
        Some(f) => rows.iter().filter(|r| r.n >= f).all(|r| r.holds),
        None => false,
    };
    let n1 = rows.iter().rposition(|r| !r.holds).map_or(rows.first().map(|r| r.n), |i| rows.get(i + 1).map(|r| r.n));
    Ok(LemmaReport { y, rows, n1, first_hold, holds_after_first })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeShiftRow {
    pub n: usize,
    pub y: f64,
    pub u: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeShiftReport {
    pub rows: Vec<SlopeShiftRow>,
    /// `U(θⁿξ, y_n) ≥ y_n` at every row.
    pub all_at_least_one: bool,
    pub final_ratio: f64,
}

/// `y_n = ⌈√n⌉` rounded up to the lattice.
pub fn default_y_rule(unit: f64) -> impl Fn(usize) -> f64 {
    move |n| ((n as f64).sqrt().ceil() / unit).ceil() * unit
}

/// `U(θⁿξ, y_n)/y_n` along `n_list`, with `U` at the given DP horizon.
pub fn slope_shift_test(
    env: &Environment,
    n_list: &[usize],
    y_rule: impl Fn(usize) -> f64,
    horizon: usize,
) -> Result<SlopeShiftReport> {
    let rows = n_list
        .iter()
        .map(|&n| {
            let y = y_rule(n);
            if !(y > 0.0) {
                return Err(Error::InvalidArgument(format!("y_rule gave {y} at n = {n}")));
            }
            let u = compute_un_exact(&env.shift(n), y, horizon)?;
            Ok(SlopeShiftRow { n, y, u, ratio: u / y })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_at_least_one = rows.iter().all(|r| r.u >= r.y);
    let final_ratio = rows.last().map_or(f64::NAN, |r| r.ratio);
    Ok(SlopeShiftReport { rows, all_at_least_one, final_ratio })
}
