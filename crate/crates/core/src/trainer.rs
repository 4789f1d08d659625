//! Single-level and multilevel training loops.
//!
//! Every step draws a fresh batch: sample `i` of step `k` for the net at
//! level `l` comes from the substream `(seed, Train/0/l/k).for_sample(i)`,
//! which yields five uniforms for the input point followed by whatever the
//! target needs. Initial weights come from `(seed, Init/0/l/0)`. Because the
//! gradient reduction order is fixed, results do not depend on the number of
//! worker threads or on whether levels train concurrently.

use crate::error::{Error, Result};
use crate::model::{validate_params, ParamVector, TrainingBox, DIM};
use crate::nn::{init_weights, learning_rate, loss_and_grad_from, Evaluator, LrSchedule, NetworkStructure, Optimizer, OptimizerState, Weights};
use crate::oracle::bs_expected_payoff;
use crate::par;
use crate::planner::AllocationPlan;
use crate::rng::{check_level_fits, sample_box_unchecked, seed_stream, stream_id, Phase, RngStream};
use crate::sde::{importance_sampled_payoff, simulate_level_value, simulate_payoff_path, LevelSpec};

/// Steps between training log entries.
pub const LOG_EVERY: u64 = 1000;

/// How a training target is computed for a sampled input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DataMode {
    /// One Milstein path per input.
    SinglePath,
    /// One conditioned exact-GBM draw weighted by the exceedance probability.
    ImportanceSampled,
    /// Mean of `n` independent Milstein paths per input.
    InnerMean(u32),
    /// Closed-form expectation; noise-free targets.
    Oracle,
}

impl DataMode {
    pub fn name(&self) -> String {
        match self {
            DataMode::SinglePath => "single_path".into(),
            DataMode::ImportanceSampled => "importance_sampled".into(),
            DataMode::InnerMean(n) => format!("inner_mean:{n}"),
            DataMode::Oracle => "oracle".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single_path" => Ok(DataMode::SinglePath),
            "importance_sampled" => Ok(DataMode::ImportanceSampled),
            "oracle" => Ok(DataMode::Oracle),
            _ => {
                let n = s
                    .strip_prefix("inner_mean:")
                    .and_then(|n| n.parse::<u32>().ok())
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| Error::domain("data_mode", format!("unknown mode `{s}`")))?;
                Ok(DataMode::InnerMean(n))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub structure: NetworkStructure,
    pub schedule: LrSchedule,
    pub steps: u64,
    pub batch_size: u64,
    pub level_spec: LevelSpec,
    pub bx: TrainingBox,
    pub seed: u64,
    pub data_mode: DataMode,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::domain("steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size", "must be at least 1"));
        }
        if self.structure.input_dim != DIM {
            return Err(Error::domain("hidden", format!("input dimension must be {DIM}")));
        }
        self.level_spec.validate()?;
        self.bx.validate()?;
        // Every constraint on a parameter vector is a half-line, so checking
        // both corners covers the box.
        validate_params(self.bx.lower())?;
        validate_params(self.bx.upper())?;
        match self.data_mode {
            DataMode::ImportanceSampled => {
                if !(self.bx.bounds[1].0 > 0.0) {
                    return Err(Error::domain("box_sigma", "importance sampling needs sigma > 0"));
                }
                if !(self.bx.bounds[4].0 > 0.0) {
                    return Err(Error::domain("box_strike", "importance sampling needs strike > 0"));
                }
            }
            DataMode::InnerMean(0) => return Err(Error::domain("data_mode", "inner mean needs n >= 1")),
            _ => {}
        }
        Ok(())
    }
}

/// A network together with the box used to rescale its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedNet {
    pub structure: NetworkStructure,
    pub weights: Weights,
    pub bx: TrainingBox,
}

impl TrainedNet {
    pub fn eval(&self, y: &ParamVector) -> f64 {
        Evaluator::new(&self.structure, &self.weights).eval(&self.bx.to_unit(y))
    }

    pub fn evaluator(&self) -> NetEvaluator<'_> {
        NetEvaluator {
            net: self,
            inner: Evaluator::new(&self.structure, &self.weights),
        }
    }
}

/// Reusable evaluation workspace for one net.
pub struct NetEvaluator<'a> {
    net: &'a TrainedNet,
    inner: Evaluator<'a>,
}

impl NetEvaluator<'_> {
    pub fn eval(&mut self, y: &ParamVector) -> f64 {
        self.inner.eval(&self.net.bx.to_unit(y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub net: TrainedNet,
    /// Batch loss at every [`LOG_EVERY`]-th step and at the last step.
    pub log: Vec<LogEntry>,
    /// SDE time steps simulated to produce all targets.
    pub path_steps: u64,
}

/// Receives `(level, entry)` as training progresses.
pub type LogSink<'a> = &'a (dyn Fn(u32, LogEntry) + Sync);

#[derive(Clone, Copy, PartialEq)]
enum Target {
    Payoff,
    LevelDiff,
}

fn sample_target(cfg: &TrainConfig, target: Target, y: &ParamVector, s: &mut RngStream) -> Result<f64> {
    match (target, cfg.data_mode) {
        (Target::Payoff, DataMode::Oracle) => bs_expected_payoff(y),
        (Target::Payoff, DataMode::SinglePath) => simulate_payoff_path(y, &cfg.level_spec, s),
        (Target::Payoff, DataMode::ImportanceSampled) => importance_sampled_payoff(y, s),
        (Target::Payoff, DataMode::InnerMean(n)) => {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += simulate_payoff_path(y, &cfg.level_spec, s)?;
            }
            Ok(sum / n as f64)
        }
        (Target::LevelDiff, DataMode::SinglePath) => simulate_level_value(y, &cfg.level_spec, s),
        (Target::LevelDiff, DataMode::InnerMean(n)) => {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += simulate_level_value(y, &cfg.level_spec, s)?;
            }
            Ok(sum / n as f64)
        }
        (Target::LevelDiff, DataMode::ImportanceSampled) => Err(Error::ImportanceSamplingLevel {
            level: cfg.level_spec.level,
        }),
        (Target::LevelDiff, DataMode::Oracle) => Err(Error::domain("data_mode", "oracle targets exist only for payoffs")),
    }
}

fn path_steps_per_sample(cfg: &TrainConfig, target: Target) -> u64 {
    let spec = &cfg.level_spec;
    let per_path = match target {
        Target::Payoff => spec.steps(),
        Target::LevelDiff => spec.steps() + spec.steps() / spec.refinement as u64,
    };
    match cfg.data_mode {
        DataMode::SinglePath => per_path,
        DataMode::InnerMean(n) => per_path * n as u64,
        DataMode::ImportanceSampled | DataMode::Oracle => 0,
    }
}

fn train_net(cfg: &TrainConfig, target: Target, sink: Option<LogSink>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let level = cfg.level_spec.level;
    check_level_fits(level)?;
    if target == Target::LevelDiff && cfg.data_mode == DataMode::ImportanceSampled {
        return Err(Error::ImportanceSamplingLevel { level });
    }
    let structure = &cfg.structure;
    let mut weights = init_weights(structure, &mut seed_stream(cfg.seed, stream_id(Phase::Init, 0, level, 0)));
    let mut opt = OptimizerState::new(cfg.optimizer, weights.theta.len());
    let mut log = Vec::new();
    let m = cfg.batch_size as usize;
    for k in 0..cfg.steps {
        let step_stream = seed_stream(cfg.seed, stream_id(Phase::Train, 0, level, k));
        let (loss, grad) = loss_and_grad_from(structure, &weights, m, |i, x| {
            let mut s = step_stream.for_sample(i as u64);
            let y = sample_box_unchecked(&mut s, &cfg.bx);
            x.copy_from_slice(&cfg.bx.to_unit(&y));
            sample_target(cfg, target, &y, &mut s)
        })?;
        let rate = learning_rate(&cfg.schedule, k);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                step: k as usize,
                loss,
                rate,
            });
        }
        if k % LOG_EVERY == 0 || k + 1 == cfg.steps {
            let entry = LogEntry {
                step: k,
                loss,
                learning_rate: rate,
            };
            if let Some(sink) = sink {
                sink(level, entry);
            }
            log.push(entry);
        }
        opt.step(&mut weights, &grad, rate);
    }
    if !weights.all_finite() {
        return Err(Error::TrainingDiverged {
            step: cfg.steps as usize,
            loss: f64::NAN,
            rate: learning_rate(&cfg.schedule, cfg.steps),
        });
    }
    Ok(TrainOutcome {
        net: TrainedNet {
            structure: structure.clone(),
            weights,
            bx: cfg.bx,
        },
        log,
        path_steps: cfg.steps * cfg.batch_size * path_steps_per_sample(cfg, target),
    })
}

/// Trains one net on payoff targets at the config's level.
pub fn train_single_level(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_single_level_with(cfg, None)
}

pub fn train_single_level_with(cfg: &TrainConfig, sink: Option<LogSink>) -> Result<TrainOutcome> {
    train_net(cfg, Target::Payoff, sink)
}

/// Sum of per-level nets.
#[derive(Clone, Debug, PartialEq)]
pub struct MultilevelNet {
    pub nets: Vec<TrainedNet>,
    pub level_spec: LevelSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultilevelOutcome {
    pub net: MultilevelNet,
    pub logs: Vec<Vec<LogEntry>>,
    pub path_steps: Vec<u64>,
}

impl MultilevelOutcome {
    pub fn total_path_steps(&self) -> u64 {
        self.path_steps.iter().sum()
    }
}

/// Config used for level `l` of a plan.
pub fn level_config(plan: &AllocationPlan, base: &TrainConfig, level: u32) -> TrainConfig {
    TrainConfig {
        steps: plan.train_steps[level as usize],
        batch_size: plan.batch_sizes[level as usize],
        level_spec: base.level_spec.at_level(level),
        ..base.clone()
    }
}

/// Trains net `l` on coupled level differences (payoffs at level 0) with
/// batch size `M_l` for `K_l` steps. Levels train concurrently when the
/// parallel feature is on.
pub fn train_multilevel(plan: &AllocationPlan, base: &TrainConfig) -> Result<MultilevelOutcome> {
    train_multilevel_with(plan, base, None)
}

pub fn train_multilevel_with(plan: &AllocationPlan, base: &TrainConfig, sink: Option<LogSink>) -> Result<MultilevelOutcome> {
    plan.validate()?;
    if base.level_spec.level != 0 {
        return Err(Error::Plan("multilevel base config must start at level 0".into()));
    }
    check_level_fits(plan.levels)?;
    if plan.levels > 0 && base.data_mode == DataMode::ImportanceSampled {
        return Err(Error::ImportanceSamplingLevel { level: 1 });
    }
    let outcomes = par::try_map_range(plan.levels as usize + 1, |l| {
        let l = l as u32;
        let cfg = level_config(plan, base, l);
        let target = if l == 0 { Target::Payoff } else { Target::LevelDiff };
        train_net(&cfg, target, sink).map_err(|e| e.at_level(l))
    })?;
    let mut nets = Vec::with_capacity(outcomes.len());
    let mut logs = Vec::with_capacity(outcomes.len());
    let mut path_steps = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        nets.push(o.net);
        logs.push(o.log);
        path_steps.push(o.path_steps);
    }
    Ok(MultilevelOutcome {
        net: MultilevelNet {
            nets,
            level_spec: base.level_spec,
        },
        logs,
        path_steps,
    })
}

/// Sum of the component nets at `y`. Points outside a component's box are
/// evaluated anyway, with a warning.
pub fn evaluate_multilevel(net: &MultilevelNet, y: &ParamVector) -> f64 {
    if net.nets.iter().any(|n| !n.bx.contains(y)) {
        log::warn!("evaluating multilevel net outside its training box at {y:?}");
    }
    net.nets.iter().map(|n| n.eval(y)).sum()
}

/// Reusable evaluator for a multilevel sum; no box check.
pub struct MultilevelEvaluator<'a> {
    parts: Vec<NetEvaluator<'a>>,
}

impl<'a> MultilevelEvaluator<'a> {
    pub fn new(nets: &'a [TrainedNet]) -> Self {
        MultilevelEvaluator {
            parts: nets.iter().map(|n| n.evaluator()).collect(),
        }
    }

    pub fn eval(&mut self, y: &ParamVector) -> f64 {
        self.parts.iter_mut().map(|p| p.eval(y)).sum()
    }
}
