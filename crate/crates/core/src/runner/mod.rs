//! Experiment harness: expands a configuration into seeded trials, runs them
//! (in parallel with the `parallel` feature), and turns the outcomes into
//! metrics rows, CSV files and a text summary.
//!
//! Per-trial seeds come from the master seed through splitmix64, so a trial
//! is identified by `(variant, seed index)` and its result does not depend on
//! scheduling. Results are always reported in that order.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::scenarios::{learning_rate_sweep, reference_sampling, NetworkKind, Scenario, ScenarioError, TrialOutcome};

pub use config::{parse_config, EmitFlags, ExperimentConfig, DEFAULT_MASTER_SEED};
pub use output::{certificate_report, metrics_csv, summarize, timing_csv, trace_csv};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LIPMRAC_OUT";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{key}: {message}")]
    Config { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{scenario} (seed index {seed_index}): {source}")]
    Trial { scenario: String, seed_index: u64, source: ScenarioError },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// splitmix64 output function applied to `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index`: the `index`-th output of a splitmix64 stream
/// started at `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Scenario variants a configuration expands into. `sweep` forces the
/// learning-rate cross product over the configured base scenario.
pub fn plan(cfg: &ExperimentConfig, sweep: bool) -> Result<Vec<Scenario>, RunnerError> {
    let base = cfg.base_scenario()?;
    let variants = if sweep || cfg.scenario == "lr-sweep" {
        learning_rate_sweep(&base, &cfg.rates, &cfg.networks)
    } else if cfg.scenario == "reference-sampling" {
        reference_sampling(&base, cfg.sampling_count, cfg.sampling_seed)
    } else {
        vec![base]
    };
    for v in &variants {
        v.check_certified()
            .map_err(|e| RunnerError::Config { key: "adaptation.lipschitz".into(), message: format!("{}: {e}", v.name) })?;
    }
    Ok(variants)
}

#[derive(Debug, Clone)]
pub struct Trial {
    pub variant: usize,
    pub scenario: Scenario,
    pub seed_index: u64,
    pub seed: u64,
}

/// Every `(variant, seed index)` pair. Without an explicit list each variant
/// uses its own seed count.
pub fn trials(variants: &[Scenario], seeds: Option<&[u64]>, master_seed: u64) -> Vec<Trial> {
    let mut out = Vec::new();
    for (variant, s) in variants.iter().enumerate() {
        let indices: Vec<u64> = match seeds {
            Some(list) => list.to_vec(),
            None => (0..s.seeds as u64).collect(),
        };
        for seed_index in indices {
            out.push(Trial { variant, scenario: s.clone(), seed_index, seed: derive_seed(master_seed, seed_index) });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub variant: usize,
    pub scenario: String,
    pub seed_index: u64,
    pub seed: u64,
    pub network: NetworkKind,
    pub learning_rate: f64,
    pub lipschitz: f64,
    pub gamma: f64,
    pub outcome: TrialOutcome,
    pub wall_clock: Duration,
}

pub fn run_trial(trial: &Trial) -> Result<TrialResult, RunnerError> {
    let start = Instant::now();
    let outcome = trial.scenario.run(trial.seed).map_err(|source| RunnerError::Trial {
        scenario: trial.scenario.name.clone(),
        seed_index: trial.seed_index,
        source,
    })?;
    let s = &trial.scenario;
    Ok(TrialResult {
        variant: trial.variant,
        scenario: s.name.clone(),
        seed_index: trial.seed_index,
        seed: trial.seed,
        network: s.adaptation.network,
        learning_rate: s.adaptation.learning_rate,
        lipschitz: s.adaptation.lipschitz,
        gamma: s.gain.gamma,
        outcome,
        wall_clock: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// Work-stealing pool; `jobs` caps the thread count. Falls back to
    /// sequential execution when built without the `parallel` feature.
    Parallel { jobs: Option<usize> },
    Sequential,
}

/// Runs every trial; results come back in input order.
pub fn execute(trials: &[Trial], exec: Execution) -> Result<Vec<TrialResult>, RunnerError> {
    match exec {
        Execution::Sequential | Execution::Parallel { jobs: Some(1) } => trials.iter().map(run_trial).collect(),
        Execution::Parallel { jobs } => execute_parallel(trials, jobs),
    }
}

#[cfg(feature = "parallel")]
fn execute_parallel(trials: &[Trial], jobs: Option<usize>) -> Result<Vec<TrialResult>, RunnerError> {
    use rayon::prelude::*;
    let work = || trials.par_iter().map(run_trial).collect::<Result<Vec<_>, _>>();
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RunnerError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn execute_parallel(trials: &[Trial], _jobs: Option<usize>) -> Result<Vec<TrialResult>, RunnerError> {
    trials.iter().map(run_trial).collect()
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scenario: String,
    pub seed_index: u64,
    pub seed: u64,
    pub network: NetworkKind,
    pub learning_rate: f64,
    pub lipschitz: f64,
    pub gamma: f64,
    pub rms_error: f64,
    pub unadapted_rms: f64,
    pub rms_position: Option<f64>,
    pub rms_pendulum: Option<f64>,
    pub terminal_pendulum: Option<f64>,
    pub diverged: bool,
    pub certified: Option<bool>,
    pub slack: Option<f64>,
    pub state_bound: Option<bool>,
    pub wall_clock: f64,
}

impl MetricsRow {
    pub fn from_result(r: &TrialResult) -> Self {
        let o = &r.outcome;
        Self {
            scenario: r.scenario.clone(),
            seed_index: r.seed_index,
            seed: r.seed,
            network: r.network,
            learning_rate: r.learning_rate,
            lipschitz: r.lipschitz,
            gamma: r.gamma,
            rms_error: o.trace.rms_error(),
            unadapted_rms: o.unadapted_rms,
            rms_position: o.pendulum.map(|p| p.rms_position),
            rms_pendulum: o.pendulum.map(|p| p.rms_pendulum),
            terminal_pendulum: o.pendulum.map(|p| p.terminal_pendulum),
            diverged: o.trace.diverged(),
            certified: o.certificate.map(|c| c.certified()),
            slack: o.certificate.map(|c| c.slack),
            state_bound: o.state_bound.map(|b| b.passed),
            wall_clock: r.wall_clock.as_secs_f64(),
        }
    }

    /// A certified trial that diverged or broke the state bound.
    pub fn violates_certificate(&self) -> bool {
        self.certified == Some(true) && (self.diverged || self.state_bound == Some(false))
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub variants: Vec<Scenario>,
    pub results: Vec<TrialResult>,
    pub rows: Vec<MetricsRow>,
    pub written: Vec<PathBuf>,
}

impl Report {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violates_certificate()).count()
    }
}

/// Plans, executes and (when `cfg.out` is set) writes the artifacts.
pub fn run_experiment(cfg: &ExperimentConfig, sweep: bool, exec: Execution) -> Result<Report, RunnerError> {
    let variants = plan(cfg, sweep)?;
    let trials = trials(&variants, cfg.seeds.as_deref(), cfg.master_seed);
    let mut results = execute(&trials, exec)?;
    results.sort_by_key(|r| (r.variant, r.seed_index));
    let rows: Vec<MetricsRow> = results.iter().map(MetricsRow::from_result).collect();
    let written = match &cfg.out {
        Some(dir) => output::write_artifacts(dir, &results, &rows, cfg.emit)?,
        None => Vec::new(),
    };
    Ok(Report { variants, results, rows, written })
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> RunnerError {
    RunnerError::Io { path: path.to_path_buf(), source }
}
