//! Command implementations behind the `mlmc` binary.
//!
//! All randomness derives from the config seed. Substream ids pack
//! `phase:8 | slot:8 | level:8 | index:40`:
//!
//! | phase | slot | level | index | used for |
//! |-------|------|-------|-------|----------|
//! | 1 train | 0 | l | step k | batch of net l at step k, sample i via `for_sample(i)` |
//! | 2 init | 0 | l | 0 | initial weights of net l |
//! | 3 pilot | 0 | l | 0 | planner pilot samples at level l |
//! | 3 pilot | 1..254 | l | 0 | pilot samples at the p-th box point |
//! | 3 pilot | 255 | 0 | 0 | box points of averaged pilots |
//! | 4 evaluate | 0 | 0 | 0 | test points of error measurement |
//! | 5 study | 1..6 | l | i | study samples (plain, IS, weak error, level variance, telescoping) |
//!
//! Studies repeat trainings with `derive_seed(seed, r)` for repetition `r`.

pub mod config;
pub mod weights;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::oracle::{measure_error, ErrorReport};
use crate::planner::{build_plan, AllocationPlan};
use crate::rng::{seed_stream, stream_id, Phase};
use crate::studies;
use crate::trainer::{train_multilevel_with, train_single_level_with, LogEntry, MultilevelEvaluator, TrainedNet};

pub use config::ExperimentConfig;

/// `--mode` of the train command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Single,
    Multilevel,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(TrainMode::Single),
            "multilevel" => Ok(TrainMode::Multilevel),
            _ => Err(Error::domain("mode", format!("unknown train mode `{s}` (single | multilevel)"))),
        }
    }
}

/// `--mode` of the study command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    BatchConvergence,
    VarianceReduction,
    SlopeFits,
}

impl Study {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "batch_convergence" => Ok(Study::BatchConvergence),
            "variance_reduction" => Ok(Study::VarianceReduction),
            "slope_fits" => Ok(Study::SlopeFits),
            _ => Err(Error::domain(
                "mode",
                format!("unknown study `{s}` (batch_convergence | variance_reduction | slope_fits)"),
            )),
        }
    }
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

/// Net files written by `train`, in level order.
pub fn net_path(out_dir: &Path, index: u32) -> PathBuf {
    out_dir.join(format!("net_{index}.txt"))
}

pub fn cmd_plan(cfg: &ExperimentConfig) -> Result<AllocationPlan> {
    ensure_out_dir(cfg)?;
    let (plan, _) = build_plan(&cfg.planner_config())?;
    let path = cfg.plan_path();
    plan.save(&path)?;
    plan.write_csv(std::io::stdout().lock())?;
    eprintln!("plan written to {}", path.display());
    Ok(plan)
}

fn summarize(report: &ErrorReport) -> String {
    let a = report.argmax_point;
    format!(
        "n_test={} linf={:.6e} l1={:.6e} argmax=({}, {}, {}, {}, {})",
        report.n_test, report.linf, report.l1, a.mu, a.sigma, a.s0, a.maturity, a.strike
    )
}

fn error_report(cfg: &ExperimentConfig, nets: &[TrainedNet]) -> Result<ErrorReport> {
    let stream = seed_stream(cfg.seed, stream_id(Phase::Evaluate, 0, 0, 0));
    measure_error(
        |y: &ParamVector| MultilevelEvaluator::new(nets).eval(y),
        &cfg.bx,
        cfg.n_test,
        stream,
    )
}

fn write_report(path: &Path, report: &ErrorReport, path_steps: Option<u64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    let mut header = vec!["n_test", "linf", "l1", "argmax_mu", "argmax_sigma", "argmax_s0", "argmax_maturity", "argmax_strike", "seed"];
    if path_steps.is_some() {
        header.push("path_steps");
    }
    w.write_record(&header)?;
    let a = report.argmax_point;
    let mut rec = vec![
        report.n_test.to_string(),
        format!("{:e}", report.linf),
        format!("{:e}", report.l1),
        a.mu.to_string(),
        a.sigma.to_string(),
        a.s0.to_string(),
        a.maturity.to_string(),
        a.strike.to_string(),
        report.seed.to_string(),
    ];
    if let Some(p) = path_steps {
        rec.push(p.to_string());
    }
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

/// Training-log writers, one per level, flushed after every row so a
/// failed run keeps its partial logs.
struct LogFiles {
    writers: Mutex<Vec<(u32, csv::Writer<File>)>>,
}

impl LogFiles {
    fn create(out_dir: &Path, levels: impl Iterator<Item = u32>) -> Result<Self> {
        let mut writers = Vec::new();
        for l in levels {
            let mut w = csv::Writer::from_writer(File::create(out_dir.join(format!("train_log_l{l}.csv")))?);
            w.write_record(["step", "loss", "learning_rate"])?;
            w.flush()?;
            writers.push((l, w));
        }
        Ok(LogFiles {
            writers: Mutex::new(writers),
        })
    }

    fn record(&self, level: u32, e: LogEntry) {
        let mut ws = self.writers.lock().unwrap_or_else(|p| p.into_inner());
        if let Some((_, w)) = ws.iter_mut().find(|(l, _)| *l == level) {
            let row = [e.step.to_string(), format!("{:e}", e.loss), format!("{:e}", e.learning_rate)];
            if w.write_record(&row).and_then(|_| w.flush().map_err(csv::Error::from)).is_err() {
                log::warn!("could not write training log for level {level}");
            }
        }
        log::info!("level {level} step {} loss {:.6e} rate {:.3e}", e.step, e.loss, e.learning_rate);
    }
}

/// Trains and writes `net_<l>.txt` plus `train_log_l<l>.csv` for every net,
/// then measures the error of the (summed) result.
pub fn cmd_train(cfg: &ExperimentConfig, mode: TrainMode) -> Result<(Vec<TrainedNet>, ErrorReport)> {
    ensure_out_dir(cfg)?;
    let base = cfg.train_config()?;
    let (nets, path_steps) = match mode {
        TrainMode::Single => {
            let logs = LogFiles::create(&cfg.out_dir, std::iter::once(cfg.level))?;
            let sink = |l: u32, e: LogEntry| logs.record(l, e);
            let out = train_single_level_with(&base, Some(&sink))?;
            (vec![out.net], out.path_steps)
        }
        TrainMode::Multilevel => {
            let plan = AllocationPlan::load(&cfg.plan_path())?;
            let logs = LogFiles::create(&cfg.out_dir, 0..=plan.levels)?;
            let sink = |l: u32, e: LogEntry| logs.record(l, e);
            let base = crate::trainer::TrainConfig {
                level_spec: base.level_spec.at_level(0),
                ..base
            };
            let out = train_multilevel_with(&plan, &base, Some(&sink))?;
            let total = out.total_path_steps();
            (out.net.nets, total)
        }
    };
    for (i, net) in nets.iter().enumerate() {
        weights::save(&net_path(&cfg.out_dir, i as u32), std::slice::from_ref(net))?;
    }
    let report = error_report(cfg, &nets)?;
    write_report(&cfg.out_dir.join("train_report.csv"), &report, Some(path_steps))?;
    println!("{} path_steps={path_steps}", summarize(&report));
    Ok((nets, report))
}

/// Weights files named in the config, or every `net_<i>.txt` in the output
/// directory in index order.
pub fn weight_files(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    if let Some(w) = &cfg.weights {
        return Ok(w.clone());
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(&cfg.out_dir)? {
        let path = entry?.path();
        let index = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("net_")?.strip_suffix(".txt")?.parse::<u32>().ok());
        if let Some(i) = index {
            found.push((i, path));
        }
    }
    if found.is_empty() {
        return Err(Error::Parse {
            location: cfg.out_dir.display().to_string(),
            reason: "no weights files found".into(),
        });
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Sums every net in every weights file and compares with the oracle on the
/// config's box.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<ErrorReport> {
    ensure_out_dir(cfg)?;
    let mut nets = Vec::new();
    for path in weight_files(cfg)? {
        nets.extend(weights::load(&path)?);
    }
    let report = error_report(cfg, &nets)?;
    write_report(&cfg.out_dir.join("evaluate.csv"), &report, None)?;
    println!("{}", summarize(&report));
    Ok(report)
}

pub fn cmd_study(cfg: &ExperimentConfig, which: Study) -> Result<PathBuf> {
    ensure_out_dir(cfg)?;
    let base = cfg.train_config()?;
    let path = match which {
        Study::BatchConvergence => {
            let rows = studies::batch_convergence_study(&cfg.bx, &cfg.study_batches, cfg.study_reps, &base, cfg.n_test)?;
            let path = cfg.out_dir.join("batch_convergence.csv");
            studies::write_batch_table(&rows, File::create(&path)?)?;
            studies::write_batch_table(&rows, std::io::stdout().lock())?;
            path
        }
        Study::VarianceReduction => {
            let report = studies::variance_reduction_study(
                &cfg.bx,
                cfg.batch_size,
                cfg.study_reps,
                &base,
                cfg.n_test,
                cfg.variance_samples,
            )?;
            let path = cfg.out_dir.join("variance_reduction.csv");
            studies::write_variance_table(&report, File::create(&path)?)?;
            studies::write_variance_table(&report, std::io::stdout().lock())?;
            path
        }
        Study::SlopeFits => {
            let fits = studies::slope_fits(
                &cfg.study_point,
                &base.level_spec.at_level(0),
                &cfg.weak_levels,
                cfg.weak_samples,
                &cfg.variance_levels,
                cfg.level_samples,
                cfg.seed,
            )?;
            let path = cfg.out_dir.join("slope_fits.csv");
            studies::write_slope_table(&fits, File::create(&path)?)?;
            studies::write_slope_table(&fits, std::io::stdout().lock())?;
            path
        }
    };
    eprintln!("table written to {}", path.display());
    Ok(path)
}

/// Exit status for a failed command: 1 for invalid input, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}
