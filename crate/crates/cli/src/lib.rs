//! Config-driven experiment runner for flowlab.
//!
//! A run reads an [`ExperimentConfig`], executes the experiment, and writes
//! `<prefix>.report.json` and `<prefix>.table.csv`. Pass/fail comes from the
//! invariants of the core modules; the tolerances are the constants exported
//! there.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};

use flowlab_core::FlowlabError;
use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentKind, Sweep, SweepKey};
pub use experiments::execute;
pub use report::{Check, ConvergenceRow, Outcome, Report, Table};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "FLOWLAB_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] FlowlabError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io(_) => EXIT_CONFIG,
            Self::Core(e) => match e {
                FlowlabError::Config(_) | FlowlabError::Domain(_) | FlowlabError::Dimension { .. } => EXIT_CONFIG,
                FlowlabError::Io(_) => EXIT_CONFIG,
                _ => EXIT_VIOLATION,
            },
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Core(FlowlabError::Csv(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Core(FlowlabError::Json(e))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub pass: bool,
    pub report_path: PathBuf,
    pub table_path: PathBuf,
    pub report: Report,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_PASS
        } else {
            EXIT_VIOLATION
        }
    }
}

/// Loads and validates a config, applying a `--seed` override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("thread count must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn output_prefix(config_path: &Path, cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    if let Some(p) = out {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_prefix {
        return PathBuf::from(p);
    }
    let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "flowlab".into());
    PathBuf::from(stem)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// `flowlab run`.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let cfg = load_config(config_path, opts.seed)?;
    let outcome = with_threads(opts.threads, || execute(&cfg))??;
    let report = Report::new(&cfg, &outcome)?;
    let prefix = output_prefix(config_path, &cfg, opts.out.as_deref());
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let report_path = with_suffix(&prefix, ".report.json");
    let table_path = with_suffix(&prefix, ".table.csv");
    std::fs::write(&report_path, report.to_json()?)?;
    let mut buf = Vec::new();
    outcome.csv_table().write_csv(&mut buf)?;
    std::fs::write(&table_path, buf)?;
    Ok(RunSummary { pass: outcome.pass(), report_path, table_path, report })
}

/// Thread count from `--threads`, falling back to [`THREADS_ENV`].
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Core(FlowlabError::Domain("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Core(FlowlabError::EmptyAliveSet(3)).exit_code(), EXIT_VIOLATION);
    }

    #[test]
    fn prefix_resolution() {
        let cfg = ExperimentConfig::from_json(r#"{"experiment": "ou_properties", "dim": 1}"#).unwrap();
        assert_eq!(output_prefix(Path::new("cfg/run1.json"), &cfg, None), PathBuf::from("run1"));
        assert_eq!(output_prefix(Path::new("a.json"), &cfg, Some(Path::new("out/x"))), PathBuf::from("out/x"));
        assert_eq!(with_suffix(Path::new("out/x"), ".table.csv"), PathBuf::from("out/x.table.csv"));
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(with_threads(Some(0), || 1).is_err());
        assert_eq!(with_threads(Some(2), rayon::current_num_threads).unwrap(), 2);
    }
}
