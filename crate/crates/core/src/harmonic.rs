//! The quenched harmonic function `U(ξ, y) = −E_ξ S_{τ_y}`.
//!
//! `U` is the monotone limit of `U_n(ξ, y) = E_ξ(y + S_n; τ_y > n)`. On a
//! lattice `U_n` is computed exactly; by optional stopping it equals
//! `y + E_ξ(−(y + S_{τ_y}); τ_y ≤ n)`, i.e. the start plus the absorbed
//! overshoot mass, which is the form used here: it is nondecreasing in `n`
//! and never below `y`, also in floating point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::Sweep;
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{evolve, evolve_visit, LatticeDistribution};
use crate::rng::StreamKey;
use crate::scalar::Scalar;
use crate::walk::{Passage, WalkSampler};

/// Default finite horizon used in place of `n → ∞`.
pub const DEFAULT_HORIZON: usize = 10_000;

/// Fraction of censored Monte Carlo samples above which an estimate is
/// flagged.
pub const CENSORED_FLAG: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DpFiniteHorizon,
    McStopping,
}

/// A value of `U` with its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub censored: usize,
    pub method: Method,
    /// More than 1% of the samples were censored.
    pub flagged: bool,
    /// One-sided bound on `U − value` from the finite horizon (DP only).
    pub gap_bound: f64,
}

/// `U_n(ξ, y)` in lattice units, `y` in units.
pub fn un_exact_units<T: Scalar>(env: &Environment, y: i64, n: usize) -> Result<T> {
    let dist = evolve::<T>(env, y, n)?;
    Ok(u_from_dist(&dist, y))
}

fn u_from_dist<T: Scalar>(dist: &LatticeDistribution<T>, y: i64) -> T {
    T::from_lattice(y) + dist.overshoot_moment()
}

/// `U_n(ξ, y) = E_ξ(y + S_n; τ_y > n)` computed exactly on the lattice.
pub fn compute_un_exact(env: &Environment, y: f64, n: usize) -> Result<f64> {
    let unit = env.lattice()?.unit;
    let y = start_units(env, y)?;
    Ok(un_exact_units::<f64>(env, y, n)? * unit)
}

fn start_units(env: &Environment, y: f64) -> Result<i64> {
    let y = env.to_units(y)?;
    if y < 0 {
        return Err(Error::InvalidArgument(format!("start {y} is negative")));
    }
    Ok(y)
}

/// Largest possible overshoot below 0 in units.
fn max_overshoot(env: &Environment) -> Result<i64> {
    Ok((env.lattice()?.max_down - 1).max(0))
}

/// Bound on `−(y + S_τ)` in real units; without a lattice the largest
/// downward step.
pub fn overshoot_bound(env: &Environment) -> f64 {
    match env.lattice() {
        Ok(l) => (l.max_down - 1).max(0) as f64 * l.unit,
        Err(_) => env.model().alphabet().iter().map(|l| -l.min_value()).fold(0.0, f64::max),
    }
}

/// DP estimate of `U(ξ, y)` at a finite horizon.
pub fn dp_estimate(env: &Environment, y: f64, horizon: usize) -> Result<HarmonicEstimate> {
    let unit = env.lattice()?.unit;
    let y = start_units(env, y)?;
    let dist = evolve::<f64>(env, y, horizon)?;
    Ok(HarmonicEstimate {
        value: u_from_dist(&dist, y) * unit,
        std_error: 0.0,
        n_samples: 0,
        censored: 0,
        method: Method::DpFiniteHorizon,
        flagged: false,
        gap_bound: max_overshoot(env)? as f64 * unit * dist.alive_total(),
    })
}

/// Monte Carlo estimate of `U(ξ, y) = −E_ξ S_{τ_y}` from first-passage
/// samples. Each sample contributes `y` plus its overshoot below 0; a
/// censored sample contributes `y`, so the mean estimates `U_{n_max}(ξ, y)`
/// and `gap_bound` is the overshoot bound times the censored fraction.
pub fn estimate_u_stopping(
    env: &Environment,
    y: f64,
    n_samples: usize,
    n_max: usize,
    key: StreamKey,
) -> Result<HarmonicEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let sampler = WalkSampler::new(env, n_max);
    let samples: Vec<Passage> =
        (0..n_samples as u64).into_par_iter().map(|i| sampler.first_passage(y, &mut key.rng(i)).tau).collect();
    let mut censored = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    // terminal values are folded in sample order
    for s in &samples {
        match *s {
            Passage::Hit { terminal, .. } => {
                let v = y - terminal;
                sum += v;
                sum_sq += v * v;
                count += 1;
            }
            Passage::Censored { .. } => {
                sum += y;
                sum_sq += y * y;
                count += 1;
                censored += 1;
            }
        }
    }
    if censored == n_samples {
        return Err(Error::AllCensored(n_samples));
    }
    let mean = sum / count as f64;
    let var = if count > 1 { ((sum_sq - count as f64 * mean * mean) / (count - 1) as f64).max(0.0) } else { 0.0 };
    Ok(HarmonicEstimate {
        value: mean,
        std_error: (var / count as f64).sqrt(),
        n_samples,
        censored,
        method: Method::McStopping,
        flagged: censored as f64 / n_samples as f64 > CENSORED_FLAG,
        gap_bound: overshoot_bound(env) * censored as f64 / n_samples as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceProfile {
    pub points: Vec<(usize, f64)>,
    pub nondecreasing: bool,
}

/// `U_n(ξ, y)` along an increasing list of horizons, from one DP pass.
pub fn convergence_profile(env: &Environment, y: f64, n_list: &[usize]) -> Result<ConvergenceProfile> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("n_list must be increasing".into()));
    }
    let unit = env.lattice()?.unit;
    let y = start_units(env, y)?;
    let last = n_list.last().copied().unwrap_or(0);
    let mut points = Vec::with_capacity(n_list.len());
    let mut wanted = n_list.iter().peekable();
    evolve_visit::<f64>(env, y, last, |d| {
        if wanted.peek().is_some_and(|&&n| n == d.time()) {
            points.push((d.time(), u_from_dist(d, y) * unit));
            wanted.next();
        }
    })?;
    let nondecreasing = points.windows(2).all(|w| w[0].1 <= w[1].1);
    Ok(ConvergenceProfile { points, nondecreasing })
}

/// `|U_{n+1}(ξ, y) − Σ_{x>0} U_n(θξ, x) P_ξ(y + X₁ = x)|`, positions in units.
pub fn harmonic_recursion_check<T: Scalar>(env: &Environment, y: i64, n: usize) -> Result<T> {
    let lhs = un_exact_units::<T>(env, y, n + 1)?;
    let shifted = env.shift(1);
    let law = env.lattice_laws(1)?[0];
    let mut rhs = T::zero();
    for atom in law.atoms() {
        let x = y + atom.step;
        if x > 0 {
            rhs += T::from_atom(atom) * un_exact_units::<T>(&shifted, x, n)?;
        }
    }
    Ok((lhs - rhs).abs())
}

/// Supplies estimates of `U(θⁿξ, y)`.
pub trait HarmonicProvider {
    fn estimate(&self, env: &Environment, y: f64) -> Result<HarmonicEstimate>;
}

/// Finite-horizon DP values.
#[derive(Debug, Clone, Copy)]
pub struct DpProvider {
    pub horizon: usize,
}

impl HarmonicProvider for DpProvider {
    fn estimate(&self, env: &Environment, y: f64) -> Result<HarmonicEstimate> {
        dp_estimate(env, y, self.horizon)
    }
}

/// Monte Carlo stopping-time estimates.
#[derive(Debug, Clone, Copy)]
pub struct McProvider {
    pub n_samples: usize,
    pub n_max: usize,
    pub key: StreamKey,
}

impl HarmonicProvider for McProvider {
    fn estimate(&self, env: &Environment, y: f64) -> Result<HarmonicEstimate> {
        let key = StreamKey::derive(self.key.master, "harmonic-provider", &[self.key.stream, env.offset() as u64, y.to_bits()]);
        estimate_u_stopping(env, y, self.n_samples, self.n_max, key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCheck {
    pub residual: f64,
    /// Propagated standard error.
    pub std_error: f64,
    /// Combined one-sided truncation gaps.
    pub gap: f64,
    pub passed: bool,
}

/// Residual of the one-step harmonic identity
/// `U(ξ, y) = Σ_{x>0} U(θξ, x) P_ξ(y + X₁ = x)` with estimated `U`.
///
/// Passes when `|residual| ≤ 4·SE + gap`, where `gap` collects the
/// one-sided horizon bounds of the estimates. Fails with
/// `InsufficientPrecision` when `4·SE + gap` exceeds `floor`.
pub fn harmonic_limit_check(
    env: &Environment,
    y: f64,
    provider: &dyn HarmonicProvider,
    floor: f64,
) -> Result<LimitCheck> {
    let here = provider.estimate(env, y)?;
    let shifted = env.shift(1);
    let mut rhs = 0.0;
    let mut var = here.std_error.powi(2);
    let mut gap = here.gap_bound;
    for atom in env.step_law(1).atoms() {
        let x = y + atom.value;
        if x > 0.0 {
            let e = provider.estimate(&shifted, x)?;
            rhs += atom.prob * e.value;
            var += (atom.prob * e.std_error).powi(2);
            gap += atom.prob * e.gap_bound;
        }
    }
    let std_error = var.sqrt();
    let tolerance = 4.0 * std_error + gap;
    if tolerance > floor {
        return Err(Error::InsufficientPrecision { uncertainty: tolerance, floor });
    }
    let residual = here.value - rhs;
    Ok(LimitCheck { residual, std_error, gap, passed: residual.abs() <= tolerance })
}

/// Backward table of `U_{T−m}(θ^m ξ, z)` for `m = 0..=T`, `z` up to the
/// reachable range from `y` (units).
pub(crate) fn harmonic_rows<T: Scalar>(env: &Environment, y: i64, horizon: usize) -> Result<Vec<Vec<T>>> {
    let lattice = env.lattice()?;
    let up = lattice.max_up;
    let laws = env.lattice_laws(horizon)?;
    let terminal = |z: i64| T::from_lattice(z);
    let width = |m: usize| y + m as i64 * up;
    let beyond = |_: usize, z: i64, _: &[T]| T::from_lattice(z);
    Ok(Sweep { laws: &laws, terminal: &terminal, width: &width, beyond: &beyond }.run(horizon))
}

/// Tower form of the martingale property at a finite horizon:
/// `M_n = Σ_{x>0} U_{N−n}(θⁿξ, x) P_ξ(y + S_n = x, τ_y > n)` equals
/// `U_N(ξ, y)` for every `n ≤ N`. Returns `|M_n − U_N(ξ, y)|` for each `n`
/// in `n_list` (units). The backward rows and the forward distributions are
/// computed independently.
pub fn martingale_check<T: Scalar>(env: &Environment, y: i64, horizon: usize, n_list: &[usize]) -> Result<Vec<T>> {
    if let Some(&bad) = n_list.iter().find(|&&n| n > horizon) {
        return Err(Error::InvalidArgument(format!("n = {bad} exceeds N = {horizon}")));
    }
    let rows = harmonic_rows::<T>(env, y, horizon)?;
    let target = un_exact_units::<T>(env, y, horizon)?;
    let mut dists = Vec::with_capacity(horizon + 1);
    evolve_visit::<T>(env, y, horizon, |d| dists.push(d.clone()))?;
    Ok(n_list
        .iter()
        .map(|&n| {
            let d = &dists[n];
            let row = &rows[n];
            let m = d.alive().fold(T::zero(), |acc, (x, mass)| acc + row[x as usize].clone() * mass.clone());
            (m - target.clone()).abs()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeProfile {
    /// `(y, U(ξ, y), U(ξ, y)/y)`.
    pub points: Vec<(f64, f64, f64)>,
    /// `U(ξ, y) ≥ y` at every point.
    pub lower_bound_holds: bool,
    pub final_ratio: f64,
}

/// `U(ξ, y)/y` along increasing positive `y`, with `U` at a DP horizon.
pub fn slope_profile(env: &Environment, y_list: &[f64], horizon: usize) -> Result<SlopeProfile> {
    if y_list.iter().any(|&y| y <= 0.0) || y_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("y_list must be positive and increasing".into()));
    }
    let points = y_list
        .par_iter()
        .map(|&y| {
            let u = compute_un_exact(env, y, horizon)?;
            Ok((y, u, u / y))
        })
        .collect::<Result<Vec<_>>>()?;
    let lower_bound_holds = points.iter().all(|&(y, u, _)| u >= y);
    let final_ratio = points.last().map(|p| p.2).unwrap_or(f64::NAN);
    Ok(SlopeProfile { points, lower_bound_holds, final_ratio })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::environment::{build_model, LawSpec, ModelSpec};
    use crate::scalar::Exact;

    fn env_of(spec: ModelSpec) -> Environment {
        Arc::new(build_model(&spec).unwrap()).realize(11)
    }

    fn srw() -> Environment {
        env_of(ModelSpec::simple_symmetric())
    }

    fn skewed() -> Environment {
        env_of(ModelSpec::iid(vec![LawSpec::new(&[-2.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0])], vec![1.0]))
    }

    fn mixed() -> Environment {
        env_of(ModelSpec::iid(
            vec![LawSpec::new(&[-1.0, 1.0], &[0.5, 0.5]), LawSpec::new(&[-2.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0])],
            vec![0.5, 0.5],
        ))
    }

    fn periodic() -> Environment {
        env_of(ModelSpec::periodic(
            vec![LawSpec::new(&[-1.0, 1.0], &[0.5, 0.5]), LawSpec::new(&[-2.0, 1.0], &[1.0 / 3.0, 2.0 / 3.0])],
            vec![0, 1],
        ))
    }

    #[test]
    fn srw_closed_forms_exact() {
        let env = srw();
        let half = Exact::new(1.into(), 2.into());
        for n in [1, 2, 7, 30] {
            assert_eq!(un_exact_units::<Exact>(&env, 0, n).unwrap(), half);
            assert_eq!(un_exact_units::<Exact>(&env, 3, n).unwrap(), Exact::from_integer(3.into()));
        }
        assert_eq!(compute_un_exact(&env, 0.0, 5000).unwrap(), 0.5);
        assert_eq!(compute_un_exact(&env, 3.0, 5000).unwrap(), 3.0);
    }

    #[test]
    fn one_step_skewed() {
        let u = un_exact_units::<Exact>(&skewed(), 0, 1).unwrap();
        assert_eq!(u, Exact::new(2.into(), 3.into()));
    }

    #[test]
    fn optional_stopping_matches_alive_moment() {
        for env in [srw(), mixed(), periodic()] {
            for y in [0, 1, 4] {
                for n in [1, 10, 60] {
                    let d = evolve::<Exact>(&env, y, n).unwrap();
                    assert_eq!(u_from_dist(&d, y), d.alive_first_moment());
                }
                let d = evolve::<f64>(&env, y, 3000).unwrap();
                assert!((u_from_dist(&d, y) - d.alive_first_moment()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn recursion_residuals() {
        assert!(harmonic_recursion_check::<f64>(&srw(), 0, 5).unwrap() < 1e-12);
        assert!(harmonic_recursion_check::<f64>(&periodic(), 1, 7).unwrap() < 1e-10);
        assert!(harmonic_recursion_check::<f64>(&mixed(), 2, 20).unwrap() < 1e-10);
        assert_eq!(harmonic_recursion_check::<Exact>(&mixed(), 2, 20).unwrap(), Exact::from_integer(0.into()));
    }

    #[test]
    fn martingale_identity() {
        let dev = martingale_check::<f64>(&mixed(), 2, 20, &[0, 1, 5, 20]).unwrap();
        assert!(dev.iter().all(|&d| d < 1e-9), "{dev:?}");
        let dev = martingale_check::<Exact>(&periodic(), 1, 12, &[0, 3, 12]).unwrap();
        assert!(dev.iter().all(|d| *d == Exact::from_integer(0.into())));
        let dev = martingale_check::<f64>(&srw(), 0, 10, &(0..=10).collect::<Vec<_>>()).unwrap();
        assert!(dev.iter().all(|&d| d < 1e-12));
        let rows = harmonic_rows::<f64>(&srw(), 0, 10).unwrap();
        assert_eq!(rows[0][0], 0.5);
    }

    #[test]
    fn profile_is_monotone() {
        let p = convergence_profile(&srw(), 0.0, &[1, 10, 100]).unwrap();
        assert!(p.points.iter().all(|&(_, u)| u == 0.5));
        let p = convergence_profile(&mixed(), 0.0, &[1, 10, 100, 1000, 10_000]).unwrap();
        assert!(p.nondecreasing);
        let tail = p.points[4].1 - p.points[3].1;
        assert!((0.0..1e-2).contains(&tail), "tail {tail}");
        assert!(convergence_profile(&srw(), 0.0, &[5, 5]).is_err());
    }

    #[test]
    fn slope() {
        let s = slope_profile(&srw(), &[1.0, 2.0, 10.0], 2000).unwrap();
        assert!(s.points.iter().all(|p| p.2 == 1.0));
        let s = slope_profile(&skewed(), &[1.0, 10.0, 100.0, 1000.0], DEFAULT_HORIZON).unwrap();
        assert!(s.lower_bound_holds);
        assert!((1.0..=1.01).contains(&s.final_ratio), "{}", s.final_ratio);
    }

    #[test]
    fn limit_check_dp() {
        let provider = DpProvider { horizon: 2000 };
        for y in [0.0, 1.0] {
            let c = harmonic_limit_check(&srw(), y, &provider, 0.1).unwrap();
            assert_eq!(c.residual, 0.0);
            assert!(c.passed);
        }
        let c = harmonic_limit_check(&mixed(), 1.0, &DpProvider { horizon: DEFAULT_HORIZON }, 0.1).unwrap();
        assert!(c.passed, "{c:?}");
        let err = harmonic_limit_check(&mixed(), 1.0, &DpProvider { horizon: 10 }, 1e-6).unwrap_err();
        assert!(matches!(err, Error::InsufficientPrecision { .. }));
    }

    #[test]
    fn stopping_estimator() {
        let key = StreamKey::new(1, 2);
        let e = estimate_u_stopping(&srw(), 5.0, 2000, 10_000, key).unwrap();
        assert_eq!(e.value, 5.0);
        let e = estimate_u_stopping(&srw(), 0.0, 20_000, 100_000, key).unwrap();
        assert!((e.value - 0.5).abs() < 4.0 * e.std_error, "{e:?}");
        assert!(!e.flagged);
        let e = estimate_u_stopping(&srw(), 0.0, 100, 1, key).unwrap();
        assert!(e.censored > 0 && e.flagged);
        // censored samples count with zero overshoot, so this is U_1(ξ, 0) = 1/2
        assert!((e.value - 0.5).abs() < 4.0 * e.std_error + 1e-12);
        assert_eq!(e.gap_bound, 0.0);
        assert!(matches!(estimate_u_stopping(&srw(), 50.0, 10, 3, key), Err(Error::AllCensored(10))));
    }

    #[test]
    fn mixed_mc_agrees_with_dp() {
        let env = mixed();
        let dp = dp_estimate(&env, 0.0, DEFAULT_HORIZON).unwrap();
        let mc = estimate_u_stopping(&env, 0.0, 100_000, 100_000, StreamKey::new(3, 4)).unwrap();
        assert!((mc.value - dp.value).abs() < 4.0 * mc.std_error + dp.gap_bound + mc.gap_bound, "{mc:?} {dp:?}");
        assert!(mc.value + 4.0 * mc.std_error >= 0.0);
    }
}
