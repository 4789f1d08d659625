//! Canned experiments: batch-size convergence, importance-sampling variance
//! reduction, and weak/strong convergence-rate fits of the level estimators.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{call_payoff, ParamVector, TrainingBox};
use crate::oracle::measure_error;
use crate::rng::{derive_seed, seed_stream, stream_id, Phase};
use crate::sde::{exact_gbm_terminal, importance_sampled_payoff, simulate_level_value, simulate_payoff_path, weak_error_sample, LevelSpec};
use crate::stats::{log_log_slope, sample_stats, SampleStats};
use crate::trainer::{train_single_level, DataMode, TrainConfig};

/// Substream slots used by the studies.
const SLOT_PLAIN: u8 = 1;
const SLOT_IS: u8 = 2;
const SLOT_WEAK: u8 = 3;
const SLOT_LEVEL: u8 = 4;
const SLOT_TELESCOPE: u8 = 5;
const SLOT_FINE: u8 = 6;

/// Test-point substream for repetition `rep`.
fn eval_stream(seed: u64) -> crate::rng::RngStream {
    seed_stream(seed, stream_id(Phase::Evaluate, 0, 0, 0))
}

/// Mean and sample standard deviation; the deviation is zero for one value.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let s = SampleStats::from_slice(xs);
    (s.mean, s.variance().sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRow {
    pub batch_size: u64,
    pub mean_linf: f64,
    pub std_linf: f64,
    /// `mean_linf` divided by the previous row's; absent on the first row.
    pub reduction: Option<f64>,
    pub linf: Vec<f64>,
}

/// Trains `repetitions` nets per batch size and reports the spread of their
/// sampled L-infinity errors. Repetition `r` trains with seed
/// `derive_seed(base.seed, r)` for every batch size, and its test points
/// come from the same derived seed.
pub fn batch_convergence_study(
    bx: &TrainingBox,
    batch_list: &[u64],
    repetitions: u32,
    base: &TrainConfig,
    n_test: u64,
) -> Result<Vec<BatchRow>> {
    if batch_list.is_empty() || batch_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("study_batches", "must be a non-empty increasing list"));
    }
    if repetitions == 0 {
        return Err(Error::domain("study_reps", "must be at least 1"));
    }
    let mut rows: Vec<BatchRow> = Vec::new();
    for &m in batch_list {
        let mut linf = Vec::with_capacity(repetitions as usize);
        for r in 0..repetitions {
            let seed = derive_seed(base.seed, r as u64);
            let cfg = TrainConfig {
                batch_size: m,
                bx: *bx,
                seed,
                ..base.clone()
            };
            let out = train_single_level(&cfg)?;
            let net = &out.net;
            let report = measure_error(|y: &ParamVector| net.eval(y), bx, n_test, eval_stream(seed))?;
            log::info!("batch {m} rep {r}: linf {:.6}", report.linf);
            linf.push(report.linf);
        }
        let (mean_linf, std_linf) = mean_std(&linf);
        let reduction = rows.last().map(|p| mean_linf / p.mean_linf);
        rows.push(BatchRow {
            batch_size: m,
            mean_linf,
            std_linf,
            reduction,
            linf,
        });
    }
    Ok(rows)
}

/// Writes `batch_size,mean_linf,std_linf,reduction`; the reduction column is
/// left out when there is only one row.
pub fn write_batch_table<W: Write>(rows: &[BatchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let with_reduction = rows.len() > 1;
    let mut header = vec!["batch_size", "mean_linf", "std_linf"];
    if with_reduction {
        header.push("reduction");
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.batch_size.to_string(), format!("{:e}", r.mean_linf), format!("{:e}", r.std_linf)];
        if with_reduction {
            rec.push(r.reduction.map(|x| format!("{x:e}")).unwrap_or_default());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Direct comparison of the plain and importance-sampled payoff estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorVariance {
    pub point: ParamVector,
    pub plain: SampleStats,
    pub importance: SampleStats,
}

impl EstimatorVariance {
    pub fn ratio(&self) -> f64 {
        self.importance.variance() / self.plain.variance()
    }
}

/// Plain exact-GBM payoff versus the importance-sampled estimator at `y`,
/// `n` samples each. `index` selects the substreams.
pub fn estimator_variance(y: &ParamVector, n: u64, seed: u64, index: u64) -> Result<EstimatorVariance> {
    let plain_base = seed_stream(seed, stream_id(Phase::Study, SLOT_PLAIN, 0, index));
    let is_base = seed_stream(seed, stream_id(Phase::Study, SLOT_IS, 0, index));
    let plain = sample_stats(n, |i| {
        let mut s = plain_base.for_sample(i);
        Ok(call_payoff(exact_gbm_terminal(y, &mut s), y.strike))
    })?;
    let importance = sample_stats(n, |i| importance_sampled_payoff(y, &mut is_base.for_sample(i)))?;
    Ok(EstimatorVariance {
        point: *y,
        plain,
        importance,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReductionReport {
    pub plain_linf: Vec<f64>,
    pub importance_linf: Vec<f64>,
    pub corners: Vec<EstimatorVariance>,
}

impl VarianceReductionReport {
    pub fn plain_mean(&self) -> f64 {
        mean_std(&self.plain_linf).0
    }

    pub fn importance_mean(&self) -> f64 {
        mean_std(&self.importance_linf).0
    }

    /// Mean IS error over mean plain error.
    pub fn error_ratio(&self) -> f64 {
        self.importance_mean() / self.plain_mean()
    }
}

/// Pairs of nets trained with plain and importance-sampled targets on the
/// same input substreams, plus estimator variances at the box corners.
/// `repetitions = 0` skips training and reports only the variances.
pub fn variance_reduction_study(
    bx: &TrainingBox,
    batch: u64,
    repetitions: u32,
    base: &TrainConfig,
    n_test: u64,
    n_variance: u64,
) -> Result<VarianceReductionReport> {
    let mut plain_linf = Vec::new();
    let mut importance_linf = Vec::new();
    for r in 0..repetitions {
        let seed = derive_seed(base.seed, r as u64);
        for mode in [DataMode::SinglePath, DataMode::ImportanceSampled] {
            let cfg = TrainConfig {
                batch_size: batch,
                bx: *bx,
                seed,
                data_mode: mode,
                ..base.clone()
            };
            let out = train_single_level(&cfg)?;
            let net = &out.net;
            let report = measure_error(|y: &ParamVector| net.eval(y), bx, n_test, eval_stream(seed))?;
            log::info!("rep {r} {}: linf {:.6}", mode.name(), report.linf);
            match mode {
                DataMode::SinglePath => plain_linf.push(report.linf),
                _ => importance_linf.push(report.linf),
            }
        }
    }
    let corners = bx
        .corners()
        .iter()
        .enumerate()
        .map(|(i, y)| estimator_variance(y, n_variance, base.seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(VarianceReductionReport {
        plain_linf,
        importance_linf,
        corners,
    })
}

/// Writes `quantity,mu,sigma,s0,maturity,strike,plain,importance,ratio` rows:
/// one `variance` row per corner and, when nets were trained, a
/// `mean_linf` row.
pub fn write_variance_table<W: Write>(report: &VarianceReductionReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["quantity", "mu", "sigma", "s0", "maturity", "strike", "plain", "importance", "ratio"])?;
    for c in &report.corners {
        let p = c.point;
        out.write_record([
            "variance".to_string(),
            p.mu.to_string(),
            p.sigma.to_string(),
            p.s0.to_string(),
            p.maturity.to_string(),
            p.strike.to_string(),
            format!("{:e}", c.plain.variance()),
            format!("{:e}", c.importance.variance()),
            format!("{:e}", c.ratio()),
        ])?;
    }
    if !report.plain_linf.is_empty() {
        let blank = String::new();
        out.write_record([
            "mean_linf".to_string(),
            blank.clone(),
            blank.clone(),
            blank.clone(),
            blank.clone(),
            blank,
            format!("{:e}", report.plain_mean()),
            format!("{:e}", report.importance_mean()),
            format!("{:e}", report.error_ratio()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Convergence-rate estimates at a fixed parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeFits {
    /// `(h, |E[P_h] - oracle|, standard error)`.
    pub weak: Vec<(f64, f64, f64)>,
    pub weak_slope: f64,
    /// `(h_l, V[Y_l])`.
    pub variance: Vec<(f64, f64)>,
    pub variance_slope: f64,
}

/// Weak error of the scheme at `levels_weak` and level-estimator variance at
/// `levels_var`, with log-log slopes against the step width.
///
/// The weak error is estimated from `P_h - V(S_T)` with `S_T` the exact
/// solution on the same Brownian path. Its mean equals `E[P_h] - oracle`
/// and its variance is orders of magnitude below the payoff variance.
pub fn slope_fits(
    y: &ParamVector,
    spec: &LevelSpec,
    levels_weak: &[u32],
    n_weak: u64,
    levels_var: &[u32],
    n_var: u64,
    seed: u64,
) -> Result<SlopeFits> {
    if levels_weak.len() < 2 || levels_var.len() < 2 {
        return Err(Error::domain("levels", "need at least two levels per fit"));
    }
    if levels_var.contains(&0) {
        return Err(Error::domain("levels", "variance fit starts at level 1"));
    }
    let mut weak = Vec::new();
    for &l in levels_weak {
        let sp = spec.at_level(l);
        let base = seed_stream(seed, stream_id(Phase::Study, SLOT_WEAK, l, 0));
        let st = sample_stats(n_weak, |i| weak_error_sample(y, &sp, &mut base.for_sample(i)))?;
        weak.push((sp.step_width(y.maturity), st.mean.abs(), st.std_error()));
    }
    let mut variance = Vec::new();
    for &l in levels_var {
        let sp = spec.at_level(l);
        let base = seed_stream(seed, stream_id(Phase::Study, SLOT_LEVEL, l, 0));
        let st = sample_stats(n_var, |i| simulate_level_value(y, &sp, &mut base.for_sample(i)))?;
        variance.push((sp.step_width(y.maturity), st.variance()));
    }
    let (hs, es): (Vec<f64>, Vec<f64>) = weak.iter().map(|&(h, e, _)| (h, e)).unzip();
    let (hv, vs): (Vec<f64>, Vec<f64>) = variance.iter().copied().unzip();
    Ok(SlopeFits {
        weak_slope: log_log_slope(&hs, &es),
        variance_slope: log_log_slope(&hv, &vs),
        weak,
        variance,
    })
}

/// Writes `fit,h,value,std_error` rows followed by one `slope` row per fit.
pub fn write_slope_table<W: Write>(fits: &SlopeFits, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fit", "h", "value", "std_error"])?;
    for &(h, e, se) in &fits.weak {
        out.write_record(["weak_error".into(), format!("{h:e}"), format!("{e:e}"), format!("{se:e}")])?;
    }
    for &(h, v) in &fits.variance {
        out.write_record(["level_variance".into(), format!("{h:e}"), format!("{v:e}"), String::new()])?;
    }
    out.write_record(["weak_slope".into(), String::new(), format!("{:e}", fits.weak_slope), String::new()])?;
    out.write_record(["variance_slope".into(), String::new(), format!("{:e}", fits.variance_slope), String::new()])?;
    out.flush()?;
    Ok(())
}

/// Sum of level means against a direct fine-level estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Telescoping {
    pub level_means: Vec<SampleStats>,
    pub fine: SampleStats,
}

impl Telescoping {
    pub fn sum(&self) -> f64 {
        self.level_means.iter().map(|s| s.mean).sum()
    }

    /// Standard error of the difference between the two estimates.
    pub fn combined_std_error(&self) -> f64 {
        let v: f64 = self.level_means.iter().map(|s| s.std_error().powi(2)).sum();
        (v + self.fine.std_error().powi(2)).sqrt()
    }

    pub fn difference(&self) -> f64 {
        self.sum() - self.fine.mean
    }
}

/// `sum_{l<=L} mean(Y_l)` and `mean(P_{h_L})`, `n` independent samples each.
pub fn telescoping_check(y: &ParamVector, spec: &LevelSpec, levels: u32, n: u64, seed: u64) -> Result<Telescoping> {
    let level_means = (0..=levels)
        .map(|l| {
            let sp = spec.at_level(l);
            let base = seed_stream(seed, stream_id(Phase::Study, SLOT_TELESCOPE, l, 0));
            sample_stats(n, |i| simulate_level_value(y, &sp, &mut base.for_sample(i)))
        })
        .collect::<Result<Vec<_>>>()?;
    let sp = spec.at_level(levels);
    let base = seed_stream(seed, stream_id(Phase::Study, SLOT_FINE, levels, 0));
    let fine = sample_stats(n, |i| simulate_payoff_path(y, &sp, &mut base.for_sample(i)))?;
    Ok(Telescoping { level_means, fine })
}
