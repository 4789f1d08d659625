//! Sample allocation across levels and its translation into per-level
//! training batch sizes and step counts.
//!
//! Pilot runs estimate the mean and variance of the coupled level
//! estimators at a representative parameter vector. The level count `L` is
//! the first level whose estimated bias `|E[Y_L]| / (H^alpha - 1)` is within
//! `eps / sqrt(2)`, and the per-level sample counts
//!
//! ```text
//! N_l = ceil(2 eps^-2 sqrt(V_l / C_l) sum_k sqrt(V_k C_k))
//! ```
//!
//! keep the estimator variance `sum V_l / N_l` within `eps^2 / 2`. Training
//! batch sizes reuse the ratios `N_l / N_0`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{validate_params, ParamVector, TrainingBox};
use crate::rng::{sample_box_unchecked, seed_stream, stream_id, Phase, RngStream};
use crate::sde::{simulate_level_value, LevelSpec};
use crate::stats::{sample_stats, SampleStats};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelStats {
    pub level: u32,
    pub mean: f64,
    pub variance: f64,
    /// Fine plus coarse time steps per sample.
    pub cost_per_sample: f64,
}

/// Moments of `n_pilot` independent draws of `Y_l(y)`. Sample `i` uses the
/// substream `(seed, Pilot/slot/level, i)`.
pub fn pilot_level_stats(y: &ParamVector, spec: &LevelSpec, n_pilot: u64, seed: u64, slot: u8) -> Result<LevelStats> {
    if n_pilot < 2 {
        return Err(Error::domain("pilot", format!("{n_pilot} < 2 samples")));
    }
    validate_params(*y)?;
    spec.validate()?;
    let base = seed_stream(seed, stream_id(Phase::Pilot, slot, spec.level, 0));
    let s = sample_stats(n_pilot, |i| simulate_level_value(y, spec, &mut base.for_sample(i)))?;
    Ok(LevelStats {
        level: spec.level,
        mean: s.mean,
        variance: s.variance(),
        cost_per_sample: spec.cost_per_sample(),
    })
}

/// Where pilot statistics are estimated.
#[derive(Clone, Debug, PartialEq)]
pub enum PilotPoint {
    /// A single representative parameter vector.
    Single(ParamVector),
    /// Means and variances averaged over `points` draws from the box.
    BoxAverage { bx: TrainingBox, points: u32 },
}

fn pilot_stats_at(point: &PilotPoint, spec: &LevelSpec, n_pilot: u64, seed: u64) -> Result<LevelStats> {
    match point {
        PilotPoint::Single(y) => pilot_level_stats(y, spec, n_pilot, seed, 0),
        PilotPoint::BoxAverage { bx, points } => {
            bx.validate()?;
            if *points == 0 {
                return Err(Error::domain("pilot_points", "must be at least 1"));
            }
            let picker = seed_stream(seed, stream_id(Phase::Pilot, 255, 0, 0));
            let (mut mean, mut var) = (0.0, 0.0);
            for p in 0..*points {
                let y = sample_box_unchecked(&mut picker.for_sample(p as u64), bx);
                let st = pilot_level_stats(&y, spec, n_pilot, seed, (p % 254) as u8 + 1)?;
                mean += st.mean;
                var += st.variance;
            }
            Ok(LevelStats {
                level: spec.level,
                mean: mean / *points as f64,
                variance: var / *points as f64,
                cost_per_sample: spec.cost_per_sample(),
            })
        }
    }
}

/// Optimal sample counts for a target RMS accuracy `epsilon`.
pub fn giles_allocation(epsilon: f64, stats: &[LevelStats]) -> Result<Vec<u64>> {
    if !(epsilon > 0.0) {
        return Err(Error::domain("epsilon", format!("{epsilon} must be positive")));
    }
    if stats.is_empty() {
        return Err(Error::Plan("no level statistics".into()));
    }
    for s in stats {
        if !s.variance.is_finite() || s.variance < 0.0 || !(s.cost_per_sample > 0.0) {
            return Err(Error::Plan(format!("invalid statistics at level {}", s.level)));
        }
    }
    let total: f64 = stats.iter().map(|s| (s.variance * s.cost_per_sample).sqrt()).sum();
    Ok(stats
        .iter()
        .map(|s| {
            let n = 2.0 / (epsilon * epsilon) * (s.variance / s.cost_per_sample).sqrt() * total;
            (n.ceil() as u64).max(1)
        })
        .collect())
}

/// Bias test on the finest level so far:
/// `|mean_L| / (H^alpha - 1) <= eps / sqrt(2)`.
pub fn bias_converged(epsilon: f64, stats: &[LevelStats], alpha: f64, refinement: u32) -> bool {
    let last = stats.last().expect("at least one level");
    let bias = last.mean.abs() / ((refinement as f64).powf(alpha) - 1.0);
    bias <= epsilon / std::f64::consts::SQRT_2
}

/// Smallest `L >= 2` passing [`bias_converged`], sampling levels on demand
/// through `pilot(level)`. Returns `L` and the statistics of levels `0..=L`.
pub fn choose_level_count<F>(
    epsilon: f64,
    alpha: f64,
    refinement: u32,
    cap: u32,
    mut pilot: F,
) -> Result<(u32, Vec<LevelStats>)>
where
    F: FnMut(u32) -> Result<LevelStats>,
{
    if !(alpha > 0.0) {
        return Err(Error::domain("alpha", format!("{alpha} must be positive")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain("epsilon", format!("{epsilon} must be positive")));
    }
    if cap < 2 {
        return Err(Error::LevelCap { cap });
    }
    let mut stats = Vec::new();
    for l in 0..=2 {
        stats.push(pilot(l)?);
    }
    while !bias_converged(epsilon, &stats, alpha, refinement) {
        let next = stats.len() as u32;
        if next > cap {
            return Err(Error::LevelCap { cap });
        }
        stats.push(pilot(next)?);
    }
    Ok((stats.len() as u32 - 1, stats))
}

/// `M_0 = m0`, `M_l = max(1, round_half_up(m0 N_l / N_0))`, in exact
/// integer arithmetic.
pub fn batch_sizes_from_allocation(m0: u64, samples: &[u64]) -> Result<Vec<u64>> {
    if m0 == 0 {
        return Err(Error::domain("m0", "must be at least 1"));
    }
    let n0 = *samples.first().ok_or_else(|| Error::Plan("empty sample list".into()))?;
    if n0 == 0 {
        return Err(Error::Plan("N_0 must be at least 1".into()));
    }
    Ok(samples
        .iter()
        .map(|&n| {
            let m = (2 * m0 as u128 * n as u128 + n0 as u128) / (2 * n0 as u128);
            (m as u64).max(1)
        })
        .collect())
}

/// How per-level training step counts are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum StepsMode {
    /// Every level trains for `k0` steps.
    Constant,
    /// Explicit list `K_0..K_L`.
    Table(Vec<u64>),
}

pub fn train_steps_schedule(k0: u64, levels: u32, mode: &StepsMode) -> Result<Vec<u64>> {
    if k0 == 0 {
        return Err(Error::domain("k0", "must be at least 1"));
    }
    match mode {
        StepsMode::Constant => Ok(vec![k0; levels as usize + 1]),
        StepsMode::Table(ks) => {
            if ks.len() != levels as usize + 1 {
                return Err(Error::Plan(format!(
                    "step table has {} entries, expected {}",
                    ks.len(),
                    levels + 1
                )));
            }
            if ks.contains(&0) {
                return Err(Error::Plan("step table entries must be at least 1".into()));
            }
            Ok(ks.clone())
        }
    }
}

/// Per-level sample counts, batch sizes and step counts.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationPlan {
    /// Target accuracy, if the plan came from the allocation heuristic.
    pub epsilon: Option<f64>,
    pub levels: u32,
    pub step_widths: Vec<f64>,
    pub variances: Vec<f64>,
    pub samples: Vec<u64>,
    pub batch_sizes: Vec<u64>,
    pub train_steps: Vec<u64>,
}

impl AllocationPlan {
    pub fn validate(&self) -> Result<()> {
        let n = self.levels as usize + 1;
        let lens = [
            self.step_widths.len(),
            self.variances.len(),
            self.samples.len(),
            self.batch_sizes.len(),
            self.train_steps.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Plan(format!("plan columns have lengths {lens:?}, expected {n}")));
        }
        if self.samples.iter().chain(&self.batch_sizes).chain(&self.train_steps).any(|&v| v == 0) {
            return Err(Error::Plan("all counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Plan with explicit batch sizes and steps, no pilot information.
    pub fn manual(batch_sizes: Vec<u64>, train_steps: Vec<u64>, maturity: f64, spec: &LevelSpec) -> Result<Self> {
        if batch_sizes.is_empty() {
            return Err(Error::Plan("empty plan".into()));
        }
        let levels = batch_sizes.len() as u32 - 1;
        let plan = AllocationPlan {
            epsilon: None,
            levels,
            step_widths: (0..=levels).map(|l| spec.at_level(l).step_width(maturity)).collect(),
            variances: vec![f64::NAN; levels as usize + 1],
            samples: batch_sizes.clone(),
            batch_sizes,
            train_steps,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["level", "h_l", "variance", "N_l", "M_l", "K_l"])?;
        for l in 0..=self.levels as usize {
            out.write_record([
                l.to_string(),
                format!("{:e}", self.step_widths[l]),
                format!("{:e}", self.variances[l]),
                self.samples[l].to_string(),
                self.batch_sizes[l].to_string(),
                self.train_steps[l].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let expected = ["level", "h_l", "variance", "N_l", "M_l", "K_l"];
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                location: "plan header".into(),
                reason: format!("expected columns {expected:?}"),
            });
        }
        let mut plan = AllocationPlan {
            epsilon: None,
            levels: 0,
            step_widths: vec![],
            variances: vec![],
            samples: vec![],
            batch_sizes: vec![],
            train_steps: vec![],
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::Parse {
                    location: format!("plan row {}", row + 1),
                    reason: format!("missing column {}", expected[i]),
                })
            };
            let bad = |i: usize| Error::Parse {
                location: format!("plan row {}, column {}", row + 1, expected[i]),
                reason: "not a number".into(),
            };
            let level: usize = field(0)?.parse().map_err(|_| bad(0))?;
            if level != row {
                return Err(Error::Parse {
                    location: format!("plan row {}", row + 1),
                    reason: format!("level {level} out of order"),
                });
            }
            plan.step_widths.push(field(1)?.parse().map_err(|_| bad(1))?);
            plan.variances.push(field(2)?.parse().map_err(|_| bad(2))?);
            plan.samples.push(field(3)?.parse().map_err(|_| bad(3))?);
            plan.batch_sizes.push(field(4)?.parse().map_err(|_| bad(4))?);
            plan.train_steps.push(field(5)?.parse().map_err(|_| bad(5))?);
        }
        if plan.samples.is_empty() {
            return Err(Error::Plan("plan has no levels".into()));
        }
        plan.levels = plan.samples.len() as u32 - 1;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Inputs of the full planning pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub epsilon: f64,
    pub point: PilotPoint,
    pub pilot_samples: u64,
    pub alpha: f64,
    pub level_cap: u32,
    /// Fixes `L` instead of applying the bias test.
    pub fixed_levels: Option<u32>,
    pub m0: u64,
    pub k0: u64,
    pub steps_mode: StepsMode,
    pub refinement: u32,
    pub base_steps: u32,
    pub seed: u64,
}

/// Pilot statistics, level count, sample counts, batch sizes and steps.
pub fn build_plan(cfg: &PlannerConfig) -> Result<(AllocationPlan, Vec<LevelStats>)> {
    let spec = LevelSpec::new(0, cfg.refinement, cfg.base_steps)?;
    let pilot = |l: u32| pilot_stats_at(&cfg.point, &spec.at_level(l), cfg.pilot_samples, cfg.seed);
    let (levels, stats) = match cfg.fixed_levels {
        Some(l) => {
            if l > cfg.level_cap {
                return Err(Error::LevelCap { cap: cfg.level_cap });
            }
            (l, (0..=l).map(pilot).collect::<Result<Vec<_>>>()?)
        }
        None => choose_level_count(cfg.epsilon, cfg.alpha, cfg.refinement, cfg.level_cap, pilot)?,
    };
    let samples = giles_allocation(cfg.epsilon, &stats)?;
    let batch_sizes = batch_sizes_from_allocation(cfg.m0, &samples)?;
    let train_steps = train_steps_schedule(cfg.k0, levels, &cfg.steps_mode)?;
    let maturity = match &cfg.point {
        PilotPoint::Single(y) => y.maturity,
        PilotPoint::BoxAverage { bx, .. } => 0.5 * (bx.bounds[3].0 + bx.bounds[3].1),
    };
    let plan = AllocationPlan {
        epsilon: Some(cfg.epsilon),
        levels,
        step_widths: (0..=levels).map(|l| spec.at_level(l).step_width(maturity)).collect(),
        variances: stats.iter().map(|s| s.variance).collect(),
        samples,
        batch_sizes,
        train_steps,
    };
    plan.validate()?;
    Ok((plan, stats))
}

/// Moments of any per-sample quantity on the pilot stream layout; used by
/// studies that need payoff rather than level-difference statistics.
pub fn pilot_moments<F>(n: u64, base: RngStream, f: F) -> Result<SampleStats>
where
    F: Fn(&mut RngStream) -> Result<f64> + Sync + Send,
{
    sample_stats(n, |i| f(&mut base.for_sample(i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Reference sample counts for eps = 0.01 at the reference point.
    pub(crate) const REFERENCE_COUNTS: [u64; 8] = [3_000_000, 72_695, 27_756, 10_550, 3_691, 1_308, 476, 182];

    fn stat(level: u32, mean: f64, variance: f64) -> LevelStats {
        LevelStats {
            level,
            mean,
            variance,
            cost_per_sample: 2f64.powi(level as i32),
        }
    }

    #[test]
    fn single_level_allocation() {
        assert_eq!(giles_allocation(0.1, &[stat(0, 0.0, 1.0)]).unwrap(), vec![200]);
        assert!(giles_allocation(0.0, &[stat(0, 0.0, 1.0)]).is_err());
        assert!(giles_allocation(-1.0, &[stat(0, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn zero_variance_level_gets_one_sample() {
        let n = giles_allocation(0.1, &[stat(0, 0.0, 1.0), stat(1, 0.0, 0.0)]).unwrap();
        assert_eq!(n[1], 1);
    }

    #[test]
    fn batch_ratio_rule() {
        let m = batch_sizes_from_allocation(75_000, &REFERENCE_COUNTS).unwrap();
        assert_eq!(m[0], 75_000);
        assert_eq!(m[1], 1817);
        assert_eq!(batch_sizes_from_allocation(REFERENCE_COUNTS[0], &REFERENCE_COUNTS).unwrap(), REFERENCE_COUNTS.to_vec());
        // 1000 * 182 / 3e6 = 0.06 rounds to zero, floored to one.
        assert_eq!(*batch_sizes_from_allocation(1000, &REFERENCE_COUNTS).unwrap().last().unwrap(), 1);
        // Half-up: 1 * 1 / 2 = 0.5 -> 1, and 3 * 1 / 2 = 1.5 -> 2.
        assert_eq!(batch_sizes_from_allocation(3, &[2, 1]).unwrap(), vec![3, 2]);
    }

    #[test]
    fn step_schedules() {
        assert_eq!(train_steps_schedule(150_000, 7, &StepsMode::Constant).unwrap(), vec![150_000; 8]);
        let table = vec![150_000, 20_000, 19_000, 18_000, 15_000, 14_000, 13_000, 11_000];
        let k = train_steps_schedule(150_000, 7, &StepsMode::Table(table.clone())).unwrap();
        assert_eq!(k[7], 11_000);
        assert!(train_steps_schedule(150_000, 7, &StepsMode::Table(table[..7].to_vec())).is_err());
        assert!(train_steps_schedule(0, 7, &StepsMode::Constant).is_err());
    }

    #[test]
    fn deterministic_pilot_has_zero_variance() {
        let y = ParamVector::new(0.05, 0.0, 100.0, 1.0, 90.0);
        let s = pilot_level_stats(&y, &LevelSpec::dyadic(2), 100, 1, 0).unwrap();
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.cost_per_sample, 6.0);
        assert!(pilot_level_stats(&y, &LevelSpec::dyadic(2), 1, 1, 0).is_err());
    }

    #[test]
    fn loose_tolerance_stops_at_two_levels() {
        let y = ParamVector::new(0.05, 0.0, 100.0, 1.0, 0.0);
        let pilot = |l: u32| pilot_level_stats(&y, &LevelSpec::dyadic(l), 10, 1, 0);
        let (l, stats) = choose_level_count(1.0, 1.0, 2, 12, pilot).unwrap();
        assert_eq!(l, 2);
        assert_eq!(stats.len(), 3);
    }

    #[test]
    fn level_cap_is_enforced() {
        let pilot = |l: u32| Ok(stat(l, 1.0, 1.0));
        assert!(matches!(
            choose_level_count(0.01, 1.0, 2, 5, pilot),
            Err(Error::LevelCap { cap: 5 })
        ));
    }

    #[test]
    fn halving_epsilon_adds_bounded_levels() {
        // Synthetic weak error mean_l = c 2^-l with alpha = 1, H = 2.
        for &c in &[0.3, 1.0, 3.7] {
            for &eps in &[0.1, 0.03, 0.01, 0.002] {
                let pilot = |l: u32| Ok(stat(l, c * 0.5f64.powi(l as i32), 1.0));
                let (l1, _) = choose_level_count(eps, 1.0, 2, 40, pilot).unwrap();
                let (l2, _) = choose_level_count(eps / 2.0, 1.0, 2, 40, pilot).unwrap();
                assert!(l2 >= l1 && l2 - l1 <= 2, "c={c} eps={eps}: {l1} -> {l2}");
            }
        }
    }

    #[test]
    fn plan_csv_round_trip() {
        let plan = AllocationPlan {
            epsilon: Some(0.01),
            levels: 2,
            step_widths: vec![1.0, 0.5, 0.25],
            variances: vec![150.123456789, 0.1, 1e-3 / 3.0],
            samples: vec![100, 10, 2],
            batch_sizes: vec![1000, 100, 20],
            train_steps: vec![5, 5, 5],
        };
        let mut buf = Vec::new();
        plan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("level,h_l,variance,N_l,M_l,K_l\n"));
        let back = AllocationPlan::read_csv(&buf[..]).unwrap();
        assert_eq!(back.epsilon, None);
        assert_eq!(AllocationPlan { epsilon: Some(0.01), ..back }, plan);
        assert!(AllocationPlan::read_csv("level,h\n0,1\n".as_bytes()).is_err());
        assert!(AllocationPlan::read_csv("level,h_l,variance,N_l,M_l,K_l\n0,1,1,x,1,1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn allocation_is_monotone(vs in proptest::collection::vec(0.0..100.0f64, 1..6),
                                  bump in 0usize..6, factor in 1.0..10.0f64,
                                  eps in 0.01..1.0f64) {
            let stats: Vec<_> = vs.iter().enumerate().map(|(l, &v)| stat(l as u32, 0.0, v)).collect();
            let base = giles_allocation(eps, &stats).unwrap();
            let mut bumped = stats.clone();
            let b = bump % bumped.len();
            bumped[b].variance *= factor;
            let more = giles_allocation(eps, &bumped).unwrap();
            prop_assert!(base.iter().zip(&more).all(|(a, c)| c >= a));
            let tighter = giles_allocation(eps / factor, &stats).unwrap();
            prop_assert!(base.iter().zip(&tighter).all(|(a, c)| c >= a));
            // Variance budget holds by construction.
            let total: f64 = stats.iter().zip(&base).map(|(s, &n)| s.variance / n as f64).sum();
            prop_assert!(total <= eps * eps / 2.0 * (1.0 + 1e-12));
        }

        #[test]
        fn batch_sizes_scale_with_m0(ns in proptest::collection::vec(1u64..5_000_000, 1..9), m0 in 1u64..1_000_000) {
            let mut ns = ns;
            ns.sort_unstable_by(|a, b| b.cmp(a));
            let one = batch_sizes_from_allocation(m0, &ns).unwrap();
            let two = batch_sizes_from_allocation(2 * m0, &ns).unwrap();
            for (a, b) in one.iter().zip(&two) {
                let diff = *b as i64 - 2 * *a as i64;
                prop_assert!(diff.abs() <= 1 || (*a == 1 && *b <= 2));
            }
        }
    }
}
