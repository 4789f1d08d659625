use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlmc_learn::cli::{self, ExperimentConfig, Study, TrainMode};
use mlmc_learn::{par, Error};

#[derive(Parser)]
#[command(name = "mlmc", version, about = "Multilevel Monte Carlo training of option-price surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// train: single | multilevel; study: batch_convergence | variance_reduction | slope_fits.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Output directory, overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Estimate level variances and write the allocation plan.
    Plan,
    /// Train a single-level or multilevel surrogate.
    Train,
    /// Measure the error of saved weights against the closed form.
    Evaluate,
    /// Run one of the canned studies.
    Study,
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Info
    }

    fn log(&self, r: &log::Record) {
        if self.enabled(r.metadata()) {
            eprintln!("[{}] {}", r.level(), r.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn run(cli: &Cli) -> Result<(), Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::MissingField("--config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads == Some(0) {
        return Err(Error::Domain {
            field: "threads",
            reason: "must be at least 1".into(),
        });
    }
    let mode = cli.mode.as_deref();
    match cli.command {
        Command::Plan => cli::cmd_plan(&cfg).map(|_| ()),
        Command::Train => {
            let mode = TrainMode::parse(mode.unwrap_or("single"))?;
            cli::cmd_train(&cfg, mode).map(|_| ())
        }
        Command::Evaluate => cli::cmd_evaluate(&cfg).map(|_| ()),
        Command::Study => {
            let which = Study::parse(mode.ok_or_else(|| Error::MissingField("--mode".into()))?)?;
            cli::cmd_study(&cfg, which).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let _ = log::set_logger(&LOGGER).map(|()| log::set_max_level(log::LevelFilter::Info));
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match par::with_threads(cli.threads, || run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
