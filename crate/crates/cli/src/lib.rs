//! `eafo` command line: `run`, `validate`, `sweep` and `selftest`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eafo_core::io::config::{ExperimentConfig, Overrides};
use eafo_core::io::metrics::{write_long_format, MetricsFormat, MetricsHeader, MetricsRecord, MetricsWriter};
use eafo_core::sim::{build_environment, run_strategy, time_to_target, StrategyConfig};
use eafo_core::{selftest, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "eafo", version, about = "Federated learning simulator with adaptive local steps and sparsified uploads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its per-round metrics.
    Run(ConfigArgs),
    /// Check a config and print the effective settings.
    Validate(ConfigArgs),
    /// Run several strategies on one shared environment.
    Sweep(ConfigArgs),
    /// Run the estimator, bound and model oracle checks.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Strategy, or comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategy: Option<Vec<StrategyConfig>>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Simulated-time budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long)]
    uplink_bps: Option<f64>,
    #[arg(long)]
    downlink_bps: Option<f64>,
    /// Metrics file for `run`, output directory for `sweep`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<MetricsFormat>,
}

fn parse_strategy(s: &str) -> Result<StrategyConfig, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<MetricsFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            strategy: self.strategy.clone(),
            rounds: self.rounds,
            time_budget_s: self.time_budget,
            uplink_bps: self.uplink_bps,
            downlink_bps: self.downlink_bps,
            out: self.out.clone(),
            format: self.format,
        }
    }

    /// Load, override and validate.
    fn effective(&self) -> Result<ExperimentConfig, Error> {
        let mut config = ExperimentConfig::load(&self.config)?;
        config.apply(&self.overrides());
        config.validate()?;
        Ok(config)
    }
}

/// A failure with the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self { code: EXIT_RUNTIME, message: e.to_string() }
    }
}

/// Parse `argv` (including the program name), run the command and return
/// the process exit code. Diagnostics go to stderr.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Run(args) => run(&args, &mut out),
        Command::Validate(args) => validate(&args, &mut out),
        Command::Sweep(args) => sweep(&args, &mut out),
        Command::Selftest { seed } => run_selftest(seed, &mut out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn header(config: &ExperimentConfig) -> Result<MetricsHeader, Error> {
    Ok(MetricsHeader { strategy: config.strategy.to_string(), config_hash: config.config_hash()?, config: config.to_toml()? })
}

/// Stream every round of `config`'s strategy into `sink`.
fn run_into<W: Write>(
    config: &ExperimentConfig,
    env: &eafo_core::sim::Environment,
    sink: W,
) -> Result<Vec<eafo_core::sim::RoundMetrics>, Failure> {
    let header = header(config)?;
    let label = config.strategy.label();
    let mut writer = MetricsWriter::new(sink, config.output.format, &header)?;
    let outcome =
        run_strategy(env, &config.run_settings(), &config.controller_settings(), config.strategy, config.stop_rule(), &mut |m| {
            writer.write(&MetricsRecord::new(&label, &header.config_hash, m))
        })?;
    writer.into_inner()?.flush()?;
    Ok(outcome.metrics)
}

fn run(args: &ConfigArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if args.strategy.as_ref().is_some_and(|list| list.len() > 1) {
        return Err(Failure::usage("`run` takes a single strategy; use `sweep` for several"));
    }
    let loaded = args.effective()?;
    let config = loaded.with_strategy(loaded.strategy);
    let env = build_environment(&config)?;
    let metrics = match &config.output.path {
        Some(path) => {
            let file = File::create(path).map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("{}: {e}", path.display()) })?;
            let metrics = run_into(&config, &env, BufWriter::new(file))?;
            log::info!("wrote {} rounds to {}", metrics.len(), path.display());
            metrics
        }
        None => run_into(&config, &env, &mut *out)?,
    };
    if let (Some(target), Some(path)) = (config.target_accuracy, &config.output.path) {
        report_target(out, &config.strategy, &metrics, target)?;
        writeln!(out, "metrics: {}", path.display())?;
    }
    Ok(())
}

fn report_target(out: &mut dyn Write, strategy: &StrategyConfig, metrics: &[eafo_core::sim::RoundMetrics], target: f64) -> io::Result<()> {
    match time_to_target(metrics, target) {
        Some(t) => writeln!(out, "{strategy}: reached accuracy {target} at {t:.6} s"),
        None => writeln!(out, "{strategy}: did not reach accuracy {target}"),
    }
}

fn validate(args: &ConfigArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = args.effective()?;
    let strategies: Vec<String> = config.strategies().iter().map(ToString::to_string).collect();
    writeln!(
        out,
        "N={} rounds={} lr={} batch_size={} seed={}",
        config.num_clients, config.rounds, config.lr, config.batch_size, config.seed
    )?;
    writeln!(out, "strategies: {}", strategies.join(", "))?;
    writeln!(out, "config_hash: {}", config.config_hash()?)?;
    writeln!(out, "# effective config")?;
    write!(out, "{}", config.to_toml()?)?;
    Ok(())
}

fn sweep_paths(dir: &Path, prefix: &str, label: &str, format: MetricsFormat) -> PathBuf {
    dir.join(format!("{prefix}_{label}.{}", format.extension()))
}

fn sweep(args: &ConfigArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = args.effective()?;
    let dir = config.output.path.clone().unwrap_or_else(|| PathBuf::from("."));
    let env = build_environment(&config)?;
    fs::create_dir_all(&dir).map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("{}: {e}", dir.display()) })?;
    let env_hash = config.environment_hash()?;
    let prefix = &env_hash[..12];
    let mut runs = Vec::new();
    for strategy in config.strategies() {
        let single = config.with_strategy(strategy);
        let path = sweep_paths(&dir, prefix, &strategy.label(), config.output.format);
        let file = File::create(&path).map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("{}: {e}", path.display()) })?;
        let metrics = run_into(&single, &env, BufWriter::new(file))?;
        writeln!(out, "{strategy}: {} rounds -> {}", metrics.len(), path.display())?;
        if let Some(target) = config.target_accuracy {
            report_target(out, &strategy, &metrics, target)?;
        }
        runs.push((strategy.label(), metrics));
    }
    let long = dir.join(format!("{prefix}_long.csv"));
    let file = File::create(&long).map_err(|e| Failure { code: EXIT_RUNTIME, message: format!("{}: {e}", long.display()) })?;
    write_long_format(BufWriter::new(file), &runs)?.flush()?;
    writeln!(out, "long format: {}", long.display())?;
    Ok(())
}

fn run_selftest(seed: u64, out: &mut dyn Write) -> Result<(), Failure> {
    let checks = selftest::run_selftest(seed);
    for c in &checks {
        writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure { code: EXIT_RUNTIME, message: format!("{failed} selftest check(s) failed") });
    }
    Ok(())
}
