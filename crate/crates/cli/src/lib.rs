//! Config-driven runner for the rwre experiments.

pub mod config;
pub mod error;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub use config::{ExperimentConfig, Kind, LoadedConfig};
pub use error::{CliError, Result};
pub use experiments::{Outcome, DESCRIPTIONS};

/// Overrides the worker count of the config (but not `--workers`).
pub const WORKERS_ENV: &str = "RWRE_WORKERS";

pub const DEFAULT_OUT: &str = "rwre-out";

/// Command-line overrides of `rwre run`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Cli,
    Env,
    Config,
    Default,
}

#[derive(Debug, Clone, Serialize)]
pub struct Workers {
    pub count: usize,
    pub source: Source,
    /// Raw value of the environment variable when set.
    pub env_value: Option<String>,
}

/// `--workers`, then the environment variable, then the config, then the
/// number of available CPUs.
pub fn resolve_workers(cli: Option<usize>, env_value: Option<String>, config: Option<usize>) -> Result<Workers> {
    let parsed = match &env_value {
        Some(v) => Some(v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::config(WORKERS_ENV, format!("must be a positive integer, got {v:?}"))
        })?),
        None => None,
    };
    let (count, source) = match (cli, parsed, config) {
        (Some(0), _, _) => return Err(CliError::config("--workers", "must be positive")),
        (Some(n), _, _) => (n, Source::Cli),
        (None, Some(n), _) => (n, Source::Env),
        (None, None, Some(n)) => (n, Source::Config),
        (None, None, None) => (std::thread::available_parallelism().map_or(1, |n| n.get()), Source::Default),
    };
    Ok(Workers { count, source, env_value })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentEntry {
    pub experiment: &'static str,
    pub passed: bool,
    pub seconds: f64,
    pub report: String,
    pub table: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_path: String,
    /// sha256 of the config file bytes.
    pub config_hash: String,
    pub model_hash: String,
    pub seed: u64,
    pub seed_source: Source,
    pub env_seeds: Vec<u64>,
    pub workers: Workers,
    pub started_unix: u64,
    pub total_seconds: f64,
    pub passed: bool,
    pub experiments: Vec<ExperimentEntry>,
    /// The config as run, with command-line overrides applied.
    pub resolved_config: ExperimentConfig,
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub failures: Vec<String>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializes");
    s.push(b'\n');
    s
}

/// Runs every experiment of the config and writes the artifacts. Failed
/// assertions still produce all files; they show up in `failures`.
pub fn run(loaded: &LoadedConfig, options: &RunOptions) -> Result<RunSummary> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut cfg = loaded.config.clone();
    let seed_source = match options.seed {
        Some(s) => {
            cfg.seed = s;
            Source::Cli
        }
        None => Source::Config,
    };
    let workers = resolve_workers(options.workers, std::env::var(WORKERS_ENV).ok(), cfg.workers)?;
    let out = options.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.out = Some(out.clone());
    let model = Arc::new(cfg.build_model()?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.count)
        .build()
        .map_err(|e| CliError::config("workers", e.to_string()))?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for kind in cfg.experiment.expand() {
        let t = Instant::now();
        let outcome = pool.install(|| experiments::run(kind, &cfg, &model))?;
        let dir = out.join(kind.name());
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        write(&dir.join("report.json"), &pretty(&outcome.report(&cfg, &model)))?;
        write(&dir.join("table.csv"), outcome.table.as_bytes())?;
        failures.extend(outcome.failures());
        entries.push(ExperimentEntry {
            experiment: kind.name(),
            passed: outcome.passed(),
            seconds: t.elapsed().as_secs_f64(),
            report: format!("{}/report.json", kind.name()),
            table: format!("{}/table.csv", kind.name()),
        });
    }

    let manifest = Manifest {
        tool: "rwre",
        version: env!("CARGO_PKG_VERSION"),
        config_path: loaded.path.display().to_string(),
        config_hash: loaded.hash.clone(),
        model_hash: model.hash().to_string(),
        seed: cfg.seed,
        seed_source,
        env_seeds: cfg.env_seeds.clone(),
        workers,
        started_unix,
        total_seconds: started.elapsed().as_secs_f64(),
        passed: failures.is_empty(),
        experiments: entries,
        resolved_config: cfg,
    };
    write(&out.join("manifest.json"), &pretty(&manifest))?;
    Ok(RunSummary { out, manifest, failures })
}

/// Text of `rwre list`.
pub fn list_text() -> String {
    let mut s = String::new();
    for d in &DESCRIPTIONS {
        s.push_str(&format!("{:<16} {}\n{:<16} parameters: {}\n", d.kind.name(), d.claim, "", d.parameters));
    }
    s.push_str(&format!("{:<16} every kind above, in order\n", Kind::All.name()));
    s
}
