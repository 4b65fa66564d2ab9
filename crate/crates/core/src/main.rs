use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lipmrac::runner::{self, parse_config, Execution, ExperimentConfig, RunnerError, OUT_DIR_ENV};
use lipmrac::scenarios::CATALOG;

#[derive(Parser)]
#[command(name = "lipmrac", version, about = "Lipschitz-network model-reference adaptive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a configuration and write traces, metrics and a summary.
    Run(RunArgs),
    /// Learning-rate sweep (rates x networks) over the configured scenario.
    Sweep(RunArgs),
    /// Print the small-gain certificate of a configuration without simulating.
    Certify(CommonArgs),
    /// List the named scenarios.
    ListScenarios,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file.
    config: PathBuf,
    /// Override a scenario field, e.g. `adaptation.learning_rate=100`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of seeds (indices 0..N), replacing the configured list.
    #[arg(long)]
    seeds: Option<u64>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Worker threads (1 runs sequentially).
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig, RunnerError> {
    let text = fs::read_to_string(&args.config).map_err(|source| RunnerError::Io { path: args.config.clone(), source })?;
    let mut cfg = parse_config(&text)?;
    let mut seen: Vec<&str> = Vec::new();
    for kv in &args.overrides {
        let (key, value) = kv.split_once('=').ok_or_else(|| RunnerError::Config {
            key: kv.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        let key = key.trim();
        if seen.contains(&key) {
            return Err(RunnerError::Config { key: key.into(), message: "duplicate --override".into() });
        }
        seen.push(key);
        cfg.overrides.retain(|(k, _)| k != key);
        cfg.overrides.push((key.to_string(), value.trim().to_string()));
    }
    cfg.base_scenario()?;
    Ok(cfg)
}

fn run(args: &RunArgs, sweep: bool) -> Result<ExitCode, RunnerError> {
    let mut cfg = load(&args.common)?;
    if let Some(n) = args.seeds {
        if n == 0 {
            return Err(RunnerError::Config { key: "--seeds".into(), message: "must be at least 1".into() });
        }
        cfg.seeds = Some((0..n).collect());
    }
    cfg.out = args.out.clone().or(cfg.out).or_else(|| Some(PathBuf::from("out")));
    if args.jobs.is_some() {
        cfg.jobs = args.jobs;
    }
    if cfg.jobs == Some(0) {
        return Err(RunnerError::Config { key: "--jobs".into(), message: "must be at least 1".into() });
    }
    let report = runner::run_experiment(&cfg, sweep, Execution::Parallel { jobs: cfg.jobs })?;
    let mut text = runner::summarize(&report.rows);
    if let Some(dir) = &cfg.out {
        text.push_str(&format!("wrote {} files to {}\n", report.written.len(), dir.display()));
    }
    emit(&text);
    let violations = report.violations();
    if violations > 0 {
        eprintln!("{violations} certified trial(s) diverged or violated the state bound");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::Certify(args) => load(args).and_then(|cfg| {
            let variants = runner::plan(&cfg, cfg.scenario == "lr-sweep")?;
            emit(&runner::certificate_report(&variants));
            Ok(ExitCode::SUCCESS)
        }),
        Command::ListScenarios => {
            let text: String = CATALOG.iter().map(|(name, about)| format!("{name:<20} {about}\n")).collect();
            emit(&text);
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
