//! The experiment kinds and what each one asserts.

use std::fmt::Write as _;
use std::sync::Arc;

use rwre_core::environment::{validate_assumptions, EnvironmentModel};
use rwre_core::harmonic::{
    compute_un_exact, estimate_u_stopping, harmonic_recursion_check, martingale_check, overshoot_bound, slope_profile,
};
use rwre_core::limits::{
    bessel_marginal_test, default_y_rule, fkg_check, lemma_bound_check, rayleigh_clt_test, slope_shift_test,
    survival_asymptotics_report, BesselOptions, GoFReport,
};
use rwre_core::{Environment, StreamKey};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Kind};
use crate::error::Result;

/// One line of `rwre list`.
pub struct Description {
    pub kind: Kind,
    pub parameters: &'static str,
    pub claim: &'static str,
}

pub const DESCRIPTIONS: [Description; 6] = [
    Description {
        kind: Kind::ValidateEnv,
        parameters: "model",
        claim: "standing assumptions: centered laws with positive atoms, stochastic ergodic mixing, finite 2+ε moments",
    },
    Description {
        kind: Kind::Harmonic,
        parameters: "y, n_max, tolerance, martingale_n, martingale_tolerance, horizon, mc_samples, mc_n_max, slope_y, slope_shift_n",
        claim: "U(ξ,y) is harmonic for the killed walk, U(θⁿξ,Y_n) is a martingale, U(ξ,y) ≥ y and U(ξ,y)/y → 1",
    },
    Description {
        kind: Kind::Survival,
        parameters: "y, n_list, u_horizon, band",
        claim: "P_ξ(τ_y > n) ~ √2·U(ξ,y)/(√(πn)σ), and P_ξ(τ_y > n) < 3·E_ξ(y+S_n; τ_y > n)/(√n σ) for large n",
    },
    Description {
        kind: Kind::MeanderClt,
        parameters: "n, samples, alpha, power_check",
        claim: "quenched meander CLT: S_N/(√N σ) given τ₀ > N is asymptotically Rayleigh, 1 − e^{−u²/2}",
    },
    Description {
        kind: Kind::ConditionedQip,
        parameters: "x, n, samples, horizon, alpha",
        claim: "the walk conditioned to stay positive, rescaled, converges to the Bessel-3 process from x",
    },
    Description {
        kind: Kind::Fkg,
        parameters: "y, n_max, tolerance",
        claim: "FKG: P_ξ(S_n > x, τ_y > n) ≥ P_ξ(S_n > x)·P_ξ(τ_y > n)",
    },
];

/// A single pass/fail check recorded in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub env_seed: Option<u64>,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Result of one experiment kind over all environment seeds.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub kind: Kind,
    pub assertions: Vec<Assertion>,
    pub results: Value,
    pub table: String,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.assertions
            .iter()
            .filter(|a| !a.passed)
            .map(|a| match a.env_seed {
                Some(s) => format!("{}: {} (env seed {s}, value {}, threshold {})", self.kind.name(), a.name, a.value, a.threshold),
                None => format!("{}: {} (value {}, threshold {})", self.kind.name(), a.name, a.value, a.threshold),
            })
            .collect()
    }

    pub fn report(&self, cfg: &ExperimentConfig, model: &EnvironmentModel) -> Value {
        json!({
            "experiment": self.kind.name(),
            "passed": self.passed(),
            "seed": cfg.seed,
            "model_hash": model.hash(),
            "env_seeds": cfg.env_seeds,
            "assertions": self.assertions,
            "results": self.results,
        })
    }
}

struct Checks(Vec<Assertion>);

impl Checks {
    fn at_most(&mut self, name: &str, env_seed: Option<u64>, value: f64, threshold: f64) {
        self.0.push(Assertion { name: name.into(), env_seed, value, threshold, passed: value <= threshold });
    }

    fn at_least(&mut self, name: &str, env_seed: Option<u64>, value: f64, threshold: f64) {
        self.0.push(Assertion { name: name.into(), env_seed, value, threshold, passed: value >= threshold });
    }

    fn above(&mut self, name: &str, env_seed: Option<u64>, value: f64, threshold: f64) {
        self.0.push(Assertion { name: name.into(), env_seed, value, threshold, passed: value > threshold });
    }

    fn below(&mut self, name: &str, env_seed: Option<u64>, value: f64, threshold: f64) {
        self.0.push(Assertion { name: name.into(), env_seed, value, threshold, passed: value < threshold });
    }

    fn holds(&mut self, name: &str, env_seed: Option<u64>, ok: bool) {
        let v = if ok { 1.0 } else { 0.0 };
        self.0.push(Assertion { name: name.into(), env_seed, value: v, threshold: 1.0, passed: ok });
    }
}

/// Runs one kind (not `all`) for every environment seed.
pub fn run(kind: Kind, cfg: &ExperimentConfig, model: &Arc<EnvironmentModel>) -> Result<Outcome> {
    let mut checks = Checks(Vec::new());
    let mut table = String::new();
    let mut results = Vec::new();
    match kind {
        Kind::ValidateEnv => validate_env(cfg, model, &mut checks, &mut table, &mut results),
        _ => {
            for &seed in &cfg.env_seeds {
                let env = model.realize(seed);
                let r = match kind {
                    Kind::Harmonic => harmonic(cfg, &env, &mut checks, &mut table)?,
                    Kind::Survival => survival(cfg, &env, &mut checks, &mut table)?,
                    Kind::MeanderClt => meander_clt(cfg, &env, &mut checks, &mut table)?,
                    Kind::ConditionedQip => conditioned_qip(cfg, &env, &mut checks, &mut table)?,
                    Kind::Fkg => fkg(cfg, &env, &mut checks, &mut table)?,
                    Kind::ValidateEnv | Kind::All => unreachable!("handled by the caller"),
                };
                results.push(json!({ "env_seed": seed, "result": r }));
            }
        }
    }
    Ok(Outcome { kind, assertions: checks.0, results: Value::Array(results), table })
}

fn header(table: &mut String, columns: &str) {
    if table.is_empty() {
        table.push_str(columns);
        table.push('\n');
    }
}

fn validate_env(
    cfg: &ExperimentConfig,
    model: &EnvironmentModel,
    checks: &mut Checks,
    table: &mut String,
    results: &mut Vec<Value>,
) {
    let report = validate_assumptions(&cfg.model);
    header(table, "letter,total,mean,second_moment,third_abs_moment,has_positive_atom");
    for (i, l) in report.letters.iter().enumerate() {
        let _ = writeln!(
            table,
            "{i},{},{},{},{},{}",
            l.total, l.mean, l.second_moment, l.third_abs_moment, l.has_positive_atom
        );
    }
    checks.holds("assumptions", None, report.passed());
    checks.holds("lattice", None, model.lattice().is_some());
    results.push(serde_json::to_value(&report).expect("report serializes"));
}

fn harmonic(cfg: &ExperimentConfig, env: &Environment, checks: &mut Checks, table: &mut String) -> Result<Value> {
    let p = &cfg.harmonic;
    let seed = Some(env.seed());
    let unit = env.lattice()?.unit;
    header(table, "env_seed,y,max_recursion_residual,martingale_deviation,u_dp,u_mc,mc_std_error,mc_censored");
    let mut rows = Vec::new();
    for &y in &p.y {
        let z = env.to_units(y)?;
        let mut residual = 0.0f64;
        for n in 1..=p.n_max {
            residual = residual.max(harmonic_recursion_check::<f64>(env, z, n)? * unit);
        }
        let n_list: Vec<usize> = (0..=p.martingale_n).collect();
        let martingale = martingale_check::<f64>(env, z, p.martingale_n, &n_list)?
            .into_iter()
            .fold(0.0f64, f64::max)
            * unit;
        let u_dp = compute_un_exact(env, y, p.mc_n_max)?;
        let key = StreamKey::derive(cfg.seed, "harmonic-mc", &[env.seed(), y.to_bits()]);
        let mc = estimate_u_stopping(env, y, p.mc_samples, p.mc_n_max, key)?;
        let _ = writeln!(
            table,
            "{},{y},{residual},{martingale},{u_dp},{},{},{}",
            env.seed(),
            mc.value,
            mc.std_error,
            mc.censored
        );
        checks.below(&format!("recursion residual, y = {y}"), seed, residual, p.tolerance);
        checks.below(&format!("martingale deviation, y = {y}"), seed, martingale, p.martingale_tolerance);
        // the estimator targets U_{mc_n_max} exactly, so only sampling error remains
        let tol = 4.0 * mc.std_error + 1e-12 * u_dp.max(1.0);
        checks.at_most(&format!("|U_mc − U_dp|, y = {y}"), seed, (mc.value - u_dp).abs(), tol);
        rows.push(json!({
            "y": y,
            "max_recursion_residual": residual,
            "martingale_deviation": martingale,
            "u_dp": u_dp,
            "mc": mc,
        }));
    }
    let bound = overshoot_bound(env);
    let slope = slope_profile(env, &p.slope_y, p.horizon)?;
    let y_last = *p.slope_y.last().expect("checked nonempty");
    checks.holds("U(ξ,y) ≥ y", seed, slope.lower_bound_holds);
    checks.at_most("U(ξ,y)/y at largest y", seed, slope.final_ratio, 1.0 + bound / y_last);
    let shift = slope_shift_test(env, &p.slope_shift_n, default_y_rule(unit), p.horizon)?;
    let y_shift = shift.rows.last().map_or(1.0, |r| r.y);
    checks.holds("U(θⁿξ,y_n) ≥ y_n", seed, shift.all_at_least_one);
    checks.at_most("U(θⁿξ,y_n)/y_n at largest n", seed, shift.final_ratio, 1.0 + bound / y_shift);
    Ok(json!({ "points": rows, "overshoot_bound": bound, "slope": slope, "slope_shift": shift }))
}

fn survival(cfg: &ExperimentConfig, env: &Environment, checks: &mut Checks, table: &mut String) -> Result<Value> {
    let p = &cfg.survival;
    let seed = Some(env.seed());
    header(table, "env_seed,y,n,exact,predicted,ratio,lemma_bound");
    let mut out = Vec::new();
    for &y in &p.y {
        let ratios = survival_asymptotics_report(env, y, &p.n_list, p.u_horizon)?;
        let lemma = lemma_bound_check(env, y, &p.n_list)?;
        for (r, l) in ratios.rows.iter().zip(&lemma.rows) {
            let _ = writeln!(table, "{},{y},{},{},{},{},{}", env.seed(), r.n, r.exact, r.predicted, r.ratio, l.bound);
        }
        let last = ratios.final_ratio();
        checks.at_least(&format!("final ratio, y = {y}"), seed, last, 1.0 - p.band);
        checks.at_most(&format!("final ratio, y = {y}"), seed, last, 1.0 + p.band);
        checks.holds(&format!("tail bound holds from its first n, y = {y}"), seed, lemma.holds_after_first);
        out.push(json!({ "ratios": ratios, "lemma": lemma }));
    }
    Ok(Value::Array(out))
}

#[derive(Serialize)]
struct SeededGoF<'a> {
    #[serde(flatten)]
    gof: &'a GoFReport,
    n: usize,
    seed: u64,
    model_hash: &'a str,
}

fn meander_clt(cfg: &ExperimentConfig, env: &Environment, checks: &mut Checks, table: &mut String) -> Result<Value> {
    let p = &cfg.meander_clt;
    let seed = Some(env.seed());
    let hash = env.model().hash();
    header(table, "env_seed,n,n_samples,statistic,p_value");
    let key = StreamKey::derive(cfg.seed, "meander-clt", &[env.seed(), p.n as u64]);
    let gof = rayleigh_clt_test(env, p.n, p.samples, key)?;
    let _ = writeln!(table, "{},{},{},{},{}", env.seed(), p.n, gof.n_samples, gof.statistic, gof.p_value);
    checks.above(&format!("KS p-value, N = {}", p.n), seed, gof.p_value, p.alpha);
    let mut out = vec![serde_json::to_value(SeededGoF { gof: &gof, n: p.n, seed: cfg.seed, model_hash: hash })
        .expect("report serializes")];
    if p.power_check {
        let key = StreamKey::derive(cfg.seed, "meander-clt", &[env.seed(), 1]);
        let weak = rayleigh_clt_test(env, 1, p.samples, key)?;
        let _ = writeln!(table, "{},1,{},{},{}", env.seed(), weak.n_samples, weak.statistic, weak.p_value);
        checks.below("KS p-value, N = 1 (power)", seed, weak.p_value, p.alpha);
        out.push(
            serde_json::to_value(SeededGoF { gof: &weak, n: 1, seed: cfg.seed, model_hash: hash })
                .expect("report serializes"),
        );
    }
    Ok(Value::Array(out))
}

fn conditioned_qip(
    cfg: &ExperimentConfig,
    env: &Environment,
    checks: &mut Checks,
    table: &mut String,
) -> Result<Value> {
    let p = &cfg.conditioned_qip;
    let seed = Some(env.seed());
    header(table, "env_seed,x,x_effective,n,n_samples,statistic,p_value,ceiling_gap");
    let mut out = Vec::new();
    for &x in &p.x {
        let key = StreamKey::derive(cfg.seed, "conditioned-qip", &[env.seed(), p.n as u64, x.to_bits()]);
        let r = bessel_marginal_test(env, x, p.n, p.samples, key, BesselOptions { horizon: p.horizon })?;
        let _ = writeln!(
            table,
            "{},{x},{},{},{},{},{},{}",
            env.seed(),
            r.x_effective,
            p.n,
            r.gof.n_samples,
            r.gof.statistic,
            r.gof.p_value,
            r.ceiling_gap
        );
        checks.above(&format!("KS p-value, x = {x}"), seed, r.gof.p_value, p.alpha);
        let mut v = serde_json::to_value(SeededGoF { gof: &r.gof, n: p.n, seed: cfg.seed, model_hash: env.model().hash() })
            .expect("report serializes");
        v["x"] = json!(x);
        v["x_effective"] = json!(r.x_effective);
        v["ceiling_gap"] = json!(r.ceiling_gap);
        out.push(v);
    }
    Ok(Value::Array(out))
}

fn fkg(cfg: &ExperimentConfig, env: &Environment, checks: &mut Checks, table: &mut String) -> Result<Value> {
    let p = &cfg.fkg;
    let seed = Some(env.seed());
    header(table, "env_seed,y,n,grid_points,worst_slack");
    let mut worst = f64::INFINITY;
    let mut out = Vec::new();
    for &y in &p.y {
        for n in 1..=p.n_max {
            let r = fkg_check(env, y, n, None)?;
            let _ = writeln!(table, "{},{y},{n},{},{}", env.seed(), r.points.len(), r.worst_slack);
            worst = worst.min(r.worst_slack);
            out.push(json!({ "y": y, "n": n, "worst_slack": r.worst_slack }));
        }
    }
    checks.at_least("worst FKG slack", seed, worst, -p.tolerance);
    Ok(Value::Array(out))
}
