//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use rwre_core::environment::{build_model, validate_assumptions, EnvironmentModel, ModelSpec};
use rwre_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    ValidateEnv,
    Harmonic,
    Survival,
    MeanderClt,
    ConditionedQip,
    Fkg,
    All,
}

impl Kind {
    pub const EACH: [Kind; 6] =
        [Kind::ValidateEnv, Kind::Harmonic, Kind::Survival, Kind::MeanderClt, Kind::ConditionedQip, Kind::Fkg];

    pub fn name(self) -> &'static str {
        match self {
            Kind::ValidateEnv => "validate-env",
            Kind::Harmonic => "harmonic",
            Kind::Survival => "survival",
            Kind::MeanderClt => "meander-clt",
            Kind::ConditionedQip => "conditioned-qip",
            Kind::Fkg => "fkg",
            Kind::All => "all",
        }
    }

    pub fn expand(self) -> Vec<Kind> {
        match self {
            Kind::All => Kind::EACH.to_vec(),
            k => vec![k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Kind,
    pub model: ModelSpec,
    /// Master seed for all sampling streams.
    pub seed: u64,
    #[serde(default = "default_env_seeds")]
    pub env_seeds: Vec<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub harmonic: HarmonicParams,
    #[serde(default)]
    pub survival: SurvivalParams,
    #[serde(default)]
    pub meander_clt: MeanderParams,
    #[serde(default)]
    pub conditioned_qip: ConditionedParams,
    #[serde(default)]
    pub fkg: FkgParams,
}

fn default_env_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicParams {
    pub y: Vec<f64>,
    /// Recursion residuals are checked for `n = 1..=n_max`.
    pub n_max: usize,
    pub tolerance: f64,
    pub martingale_n: usize,
    pub martingale_tolerance: f64,
    pub horizon: usize,
    pub mc_samples: usize,
    pub mc_n_max: usize,
    pub slope_y: Vec<f64>,
    pub slope_shift_n: Vec<usize>,
}

impl Default for HarmonicParams {
    fn default() -> Self {
        HarmonicParams {
            y: vec![0.0, 1.0, 2.0, 5.0],
            n_max: 100,
            tolerance: 1e-10,
            martingale_n: 30,
            martingale_tolerance: 1e-9,
            horizon: 10_000,
            mc_samples: 100_000,
            mc_n_max: 10_000,
            slope_y: vec![10.0, 100.0, 1000.0],
            slope_shift_n: vec![1, 100, 10_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalParams {
    pub y: Vec<f64>,
    pub n_list: Vec<usize>,
    pub u_horizon: usize,
    /// The last ratio must lie in `[1 − band, 1 + band]`.
    pub band: f64,
}

impl Default for SurvivalParams {
    fn default() -> Self {
        SurvivalParams { y: vec![0.0], n_list: vec![4, 16, 64, 256, 1024, 10_000], u_horizon: 10_000, band: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanderParams {
    pub n: usize,
    pub samples: usize,
    pub alpha: f64,
    /// Also run the test at `N = 1` and require rejection.
    pub power_check: bool,
}

impl Default for MeanderParams {
    fn default() -> Self {
        MeanderParams { n: 10_000, samples: 100_000, alpha: 0.01, power_check: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionedParams {
    pub x: Vec<f64>,
    pub n: usize,
    pub samples: usize,
    pub horizon: usize,
    pub alpha: f64,
}

impl Default for ConditionedParams {
    fn default() -> Self {
        ConditionedParams { x: vec![0.0, 1.0], n: 10_000, samples: 100_000, horizon: 10_000, alpha: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FkgParams {
    pub y: Vec<f64>,
    pub n_max: usize,
    pub tolerance: f64,
}

impl Default for FkgParams {
    fn default() -> Self {
        FkgParams { y: vec![0.0, 1.0, 2.0, 5.0], n_max: 50, tolerance: 1e-10 }
    }
}

/// A parsed config with the hash of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub hash: String,
    pub config: ExperimentConfig,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config = parse(&text)?;
    Ok(LoadedConfig { path: path.to_path_buf(), hash: hex::encode(Sha256::digest(text.as_bytes())), config })
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::config(offending_key(text, &e), e.message().trim().to_string()))?;
    config.check()?;
    Ok(config)
}

/// Dotted key for a parse error: the key on the line the error points at,
/// or the quoted field of a "missing field" message, under its table.
fn offending_key(text: &str, e: &toml::de::Error) -> String {
    let at = e.span().map_or(0, |s| s.start).min(text.len());
    let before = &text[..at];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let table = before[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(['[', ']']).trim().to_string());
    let name = if e.message().contains("missing field") || !line.contains('=') {
        e.message().split('`').nth(1).map(str::to_string)
    } else {
        line.split('=').next().map(|k| k.trim().to_string())
    };
    match (table, name) {
        (Some(t), Some(n)) if !line.trim_start().starts_with('[') => format!("{t}.{n}"),
        (_, Some(n)) => n,
        (Some(t), None) => t,
        (None, None) => "<document>".into(),
    }
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(CliError::config(key, "must be positive"));
    }
    Ok(())
}

fn level(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(CliError::config(key, format!("must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn tolerance(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(CliError::config(key, format!("must lie in (0, 1], got {v}")));
    }
    Ok(())
}

fn increasing(key: &str, v: &[usize]) -> Result<()> {
    if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config(key, "must be a nonempty, positive, strictly increasing list"));
    }
    Ok(())
}

fn nonnegative(key: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|y| !(*y >= 0.0)) {
        return Err(CliError::config(key, "must be a nonempty list of nonnegative values"));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Range checks on every parameter; the model itself is checked by
    /// [`ExperimentConfig::build_model`].
    pub fn check(&self) -> Result<()> {
        if self.env_seeds.is_empty() {
            return Err(CliError::config("env_seeds", "needs at least one seed"));
        }
        if let Some(w) = self.workers {
            positive("workers", w)?;
        }
        let h = &self.harmonic;
        nonnegative("harmonic.y", &h.y)?;
        positive("harmonic.n_max", h.n_max)?;
        tolerance("harmonic.tolerance", h.tolerance)?;
        positive("harmonic.martingale_n", h.martingale_n)?;
        tolerance("harmonic.martingale_tolerance", h.martingale_tolerance)?;
        positive("harmonic.horizon", h.horizon)?;
        positive("harmonic.mc_samples", h.mc_samples)?;
        positive("harmonic.mc_n_max", h.mc_n_max)?;
        if h.slope_y.is_empty() || h.slope_y.iter().any(|y| !(*y > 0.0)) || h.slope_y.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::config("harmonic.slope_y", "must be positive and strictly increasing"));
        }
        increasing("harmonic.slope_shift_n", &h.slope_shift_n)?;
        let s = &self.survival;
        nonnegative("survival.y", &s.y)?;
        increasing("survival.n_list", &s.n_list)?;
        positive("survival.u_horizon", s.u_horizon)?;
        level("survival.band", s.band)?;
        let m = &self.meander_clt;
        positive("meander_clt.n", m.n)?;
        positive("meander_clt.samples", m.samples)?;
        level("meander_clt.alpha", m.alpha)?;
        let c = &self.conditioned_qip;
        nonnegative("conditioned_qip.x", &c.x)?;
        positive("conditioned_qip.n", c.n)?;
        positive("conditioned_qip.samples", c.samples)?;
        positive("conditioned_qip.horizon", c.horizon)?;
        level("conditioned_qip.alpha", c.alpha)?;
        let f = &self.fkg;
        nonnegative("fkg.y", &f.y)?;
        positive("fkg.n_max", f.n_max)?;
        tolerance("fkg.tolerance", f.tolerance)?;
        Ok(())
    }

    /// Builds the model. Malformed descriptions (lengths, sums) are config
    /// errors naming the key; violated standing assumptions are
    /// `ModelInvalid` with the full assumption report.
    pub fn build_model(&self) -> Result<EnvironmentModel> {
        build_model(&self.model).map_err(|e| match e {
            CoreError::NonStochastic { what, sum } => {
                CliError::config(format!("model.{what}"), format!("sums to {sum}, expected 1"))
            }
            CoreError::InvalidModel(msg) => CliError::config("model", msg),
            CoreError::EmptyAlphabet => CliError::config("model.alphabet", "is empty"),
            CoreError::LatticeMismatch { value, unit } => {
                CliError::config("model.lattice_unit", format!("value {value} is not a multiple of {unit}"))
            }
            other => {
                let report = validate_assumptions(&self.model);
                let json = serde_json::to_string(&report).unwrap_or_default();
                CliError::ModelInvalid(format!("{other}; report: {json}"))
            }
        })
    }
}
