//! Flat `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Lists are comma separated.
//! Required keys: `seed`, `hidden`, `steps`, `batch_size` and the five
//! `box_*` ranges; every other key has a default.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `seed` | master seed for every substream | required |
//! | `out_dir` | output directory | `out` |
//! | `hidden` | hidden layer widths, e.g. `16,16` | required |
//! | `optimizer` | `sgd` or `adam` | `sgd` |
//! | `lr_initial`, `lr_decay`, `lr_step` | learning-rate schedule | `0.01`, `0.1`, `40000` |
//! | `steps`, `batch_size` | single-level training steps and batch | required |
//! | `level` | single-level training level | `0` |
//! | `refinement`, `base_steps` | time steps `base_steps * refinement^l` | `2`, `1` |
//! | `box_mu` .. `box_strike` | `lo,hi` per coordinate | required |
//! | `data_mode` | `single_path`, `importance_sampled`, `inner_mean:N`, `oracle` | `single_path` |
//! | `n_test` | error-measurement points | `100000` |
//! | `epsilon` | planner accuracy | `0.01` |
//! | `m0`, `k0` | level-0 batch and steps of a plan | `batch_size`, `steps` |
//! | `k_table` | explicit per-level steps | constant `k0` |
//! | `pilot_samples`, `alpha`, `level_cap` | planner pilot size, weak order, cap on `L` | `10000`, `1`, `12` |
//! | `plan_levels` | fixed `L` instead of the bias test | unset |
//! | `pilot_point` | pilot parameter vector | `0.05,0.2,100,1,110` |
//! | `pilot_box_points` | average pilots over this many box points instead | unset |
//! | `plan_file` | plan read by multilevel training | `<out_dir>/plan.csv` |
//! | `weights` | weights files to evaluate | `<out_dir>/net_*.txt` |
//! | `study_batches`, `study_reps` | batch-convergence study | `1000,4000,16000`, `5` |
//! | `variance_samples` | samples per corner for estimator variances | `1000000` |
//! | `study_point` | parameter vector of the slope fits | `0.05,0.2,100,1,110` |
//! | `weak_levels`, `weak_samples` | weak-error fit | `1,2,3,4,5,6`, `1000000` |
//! | `variance_levels`, `level_samples` | level-variance fit | `1,2,3,4,5`, `100000` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ParamVector, TrainingBox, DIM};
use crate::nn::{LrSchedule, NetworkStructure, Optimizer};
use crate::planner::{PilotPoint, PlannerConfig, StepsMode};
use crate::sde::LevelSpec;
use crate::trainer::{DataMode, TrainConfig};

const BOX_KEYS: [&str; DIM] = ["box_mu", "box_sigma", "box_s0", "box_maturity", "box_strike"];

const KEYS: &[&str] = &[
    "seed",
    "out_dir",
    "hidden",
    "optimizer",
    "lr_initial",
    "lr_decay",
    "lr_step",
    "steps",
    "batch_size",
    "level",
    "refinement",
    "base_steps",
    "box_mu",
    "box_sigma",
    "box_s0",
    "box_maturity",
    "box_strike",
    "data_mode",
    "n_test",
    "epsilon",
    "m0",
    "k0",
    "k_table",
    "pilot_samples",
    "alpha",
    "level_cap",
    "plan_levels",
    "pilot_point",
    "pilot_box_points",
    "plan_file",
    "weights",
    "study_batches",
    "study_reps",
    "variance_samples",
    "study_point",
    "weak_levels",
    "weak_samples",
    "variance_levels",
    "level_samples",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub hidden: Vec<usize>,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub steps: u64,
    pub batch_size: u64,
    pub level: u32,
    pub refinement: u32,
    pub base_steps: u32,
    pub bx: TrainingBox,
    pub data_mode: DataMode,
    pub n_test: u64,
    pub epsilon: f64,
    pub m0: u64,
    pub k0: u64,
    pub k_table: Option<Vec<u64>>,
    pub pilot_samples: u64,
    pub alpha: f64,
    pub level_cap: u32,
    pub plan_levels: Option<u32>,
    pub pilot_point: ParamVector,
    pub pilot_box_points: Option<u32>,
    pub plan_file: Option<PathBuf>,
    pub weights: Option<Vec<PathBuf>>,
    pub study_batches: Vec<u64>,
    pub study_reps: u32,
    pub variance_samples: u64,
    pub study_point: ParamVector,
    pub weak_levels: Vec<u32>,
    pub weak_samples: u64,
    pub variance_levels: Vec<u32>,
    pub level_samples: u64,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.map.get(key)
    }

    fn bad(&self, key: &str, what: &str) -> Error {
        let line = self.map.get(key).map(|e| e.0).unwrap_or(0);
        Error::Parse {
            location: format!("line {line}, key `{key}`"),
            reason: format!("expected {what}"),
        }
    }

    fn get<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) => v.parse().map(Some).map_err(|_| self.bad(key, what)),
        }
    }

    fn req<T: FromStr>(&self, key: &str, what: &str) -> Result<T> {
        self.get(key, what)?.ok_or_else(|| Error::MissingField(key.into()))
    }

    fn list<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) => v
                .split(',')
                .map(|x| x.trim().parse())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| self.bad(key, what)),
        }
    }

    fn point(&self, key: &str) -> Result<Option<ParamVector>> {
        match self.list::<f64>(key, "five reals")? {
            None => Ok(None),
            Some(v) if v.len() == DIM => Ok(Some(ParamVector::from_array([v[0], v[1], v[2], v[3], v[4]]))),
            Some(_) => Err(self.bad(key, "five reals")),
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("line {line_no}"),
                reason: "expected `key = value`".into(),
            })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::Parse {
                    location: format!("line {line_no}"),
                    reason: format!("unknown key `{k}`"),
                });
            }
            if map.insert(k.to_string(), (line_no, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    location: format!("line {line_no}"),
                    reason: format!("duplicate key `{k}`"),
                });
            }
        }
        let e = Entries { map };

        let seed = e.req("seed", "an unsigned integer")?;
        let hidden = e.list("hidden", "comma-separated widths")?.ok_or_else(|| Error::MissingField("hidden".into()))?;
        let steps = e.req("steps", "an unsigned integer")?;
        let batch_size = e.req("batch_size", "an unsigned integer")?;
        let mut bounds = [(0.0, 0.0); DIM];
        for (k, key) in BOX_KEYS.iter().enumerate() {
            let v: Vec<f64> = e.list(key, "`lo,hi`")?.ok_or_else(|| Error::MissingField(key.to_string()))?;
            if v.len() != 2 {
                return Err(e.bad(key, "`lo,hi`"));
            }
            bounds[k] = (v[0], v[1]);
        }
        let optimizer = match e.raw("optimizer").map(|r| r.1.as_str()) {
            None | Some("sgd") => Optimizer::Sgd,
            Some("adam") => Optimizer::adam(),
            Some(_) => return Err(e.bad("optimizer", "`sgd` or `adam`")),
        };
        let defaults = LrSchedule::standard();
        let data_mode = match e.raw("data_mode") {
            None => DataMode::SinglePath,
            Some((_, v)) => DataMode::parse(v)?,
        };
        let reference = ParamVector::reference();
        let cfg = ExperimentConfig {
            seed,
            out_dir: e.get("out_dir", "a path")?.unwrap_or_else(|| PathBuf::from("out")),
            hidden,
            optimizer,
            schedule: LrSchedule {
                initial_rate: e.get("lr_initial", "a real")?.unwrap_or(defaults.initial_rate),
                decay_rate: e.get("lr_decay", "a real")?.unwrap_or(defaults.decay_rate),
                step_rate: e.get("lr_step", "an unsigned integer")?.unwrap_or(defaults.step_rate),
            },
            steps,
            batch_size,
            level: e.get("level", "an unsigned integer")?.unwrap_or(0),
            refinement: e.get("refinement", "an unsigned integer")?.unwrap_or(2),
            base_steps: e.get("base_steps", "an unsigned integer")?.unwrap_or(1),
            bx: TrainingBox { bounds },
            data_mode,
            n_test: e.get("n_test", "an unsigned integer")?.unwrap_or(100_000),
            epsilon: e.get("epsilon", "a real")?.unwrap_or(0.01),
            m0: e.get("m0", "an unsigned integer")?.unwrap_or(batch_size),
            k0: e.get("k0", "an unsigned integer")?.unwrap_or(steps),
            k_table: e.list("k_table", "comma-separated step counts")?,
            pilot_samples: e.get("pilot_samples", "an unsigned integer")?.unwrap_or(10_000),
            alpha: e.get("alpha", "a real")?.unwrap_or(1.0),
            level_cap: e.get("level_cap", "an unsigned integer")?.unwrap_or(12),
            plan_levels: e.get("plan_levels", "an unsigned integer")?,
            pilot_point: e.point("pilot_point")?.unwrap_or(reference),
            pilot_box_points: e.get("pilot_box_points", "an unsigned integer")?,
            plan_file: e.get("plan_file", "a path")?,
            weights: e.list("weights", "comma-separated paths")?,
            study_batches: e.list("study_batches", "comma-separated batch sizes")?.unwrap_or(vec![1000, 4000, 16000]),
            study_reps: e.get("study_reps", "an unsigned integer")?.unwrap_or(5),
            variance_samples: e.get("variance_samples", "an unsigned integer")?.unwrap_or(1_000_000),
            study_point: e.point("study_point")?.unwrap_or(reference),
            weak_levels: e.list("weak_levels", "comma-separated levels")?.unwrap_or(vec![1, 2, 3, 4, 5, 6]),
            weak_samples: e.get("weak_samples", "an unsigned integer")?.unwrap_or(1_000_000),
            variance_levels: e.list("variance_levels", "comma-separated levels")?.unwrap_or(vec![1, 2, 3, 4, 5]),
            level_samples: e.get("level_samples", "an unsigned integer")?.unwrap_or(100_000),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|err| Error::Parse {
            location: path.display().to_string(),
            reason: err.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Every key, one per line, in a form [`ExperimentConfig::parse`] reads
    /// back to an equal value.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(s, "{k} = {v}").unwrap();
        };
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("hidden", join(&self.hidden));
        kv("optimizer", self.optimizer.name().into());
        kv("lr_initial", self.schedule.initial_rate.to_string());
        kv("lr_decay", self.schedule.decay_rate.to_string());
        kv("lr_step", self.schedule.step_rate.to_string());
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("level", self.level.to_string());
        kv("refinement", self.refinement.to_string());
        kv("base_steps", self.base_steps.to_string());
        for (k, key) in BOX_KEYS.iter().enumerate() {
            let (lo, hi) = self.bx.bounds[k];
            kv(key, format!("{lo},{hi}"));
        }
        kv("data_mode", self.data_mode.name());
        kv("n_test", self.n_test.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("m0", self.m0.to_string());
        kv("k0", self.k0.to_string());
        if let Some(t) = &self.k_table {
            kv("k_table", join(t));
        }
        kv("pilot_samples", self.pilot_samples.to_string());
        kv("alpha", self.alpha.to_string());
        kv("level_cap", self.level_cap.to_string());
        if let Some(l) = self.plan_levels {
            kv("plan_levels", l.to_string());
        }
        kv("pilot_point", join(&self.pilot_point.to_array()));
        if let Some(p) = self.pilot_box_points {
            kv("pilot_box_points", p.to_string());
        }
        if let Some(p) = &self.plan_file {
            kv("plan_file", p.display().to_string());
        }
        if let Some(w) = &self.weights {
            kv("weights", w.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","));
        }
        kv("study_batches", join(&self.study_batches));
        kv("study_reps", self.study_reps.to_string());
        kv("variance_samples", self.variance_samples.to_string());
        kv("study_point", join(&self.study_point.to_array()));
        kv("weak_levels", join(&self.weak_levels));
        kv("weak_samples", self.weak_samples.to_string());
        kv("variance_levels", join(&self.variance_levels));
        kv("level_samples", self.level_samples.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config()?.validate()?;
        LrSchedule::new(self.schedule.initial_rate, self.schedule.decay_rate, self.schedule.step_rate)?;
        if self.n_test == 0 {
            return Err(Error::domain("n_test", "must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::domain("epsilon", "must be positive"));
        }
        if self.m0 == 0 {
            return Err(Error::domain("m0", "must be at least 1"));
        }
        if self.k0 == 0 {
            return Err(Error::domain("k0", "must be at least 1"));
        }
        if self.pilot_samples < 2 {
            return Err(Error::domain("pilot_samples", "must be at least 2"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::domain("alpha", "must be positive"));
        }
        Ok(())
    }

    pub fn level_spec(&self) -> Result<LevelSpec> {
        LevelSpec::new(self.level, self.refinement, self.base_steps)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            structure: NetworkStructure::new(DIM, self.hidden.clone())?,
            schedule: self.schedule,
            steps: self.steps,
            batch_size: self.batch_size,
            level_spec: self.level_spec()?,
            bx: self.bx,
            seed: self.seed,
            data_mode: self.data_mode,
            optimizer: self.optimizer,
        })
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            epsilon: self.epsilon,
            point: match self.pilot_box_points {
                Some(points) => PilotPoint::BoxAverage {
                    bx: self.bx,
                    points,
                },
                None => PilotPoint::Single(self.pilot_point),
            },
            pilot_samples: self.pilot_samples,
            alpha: self.alpha,
            level_cap: self.level_cap,
            fixed_levels: self.plan_levels,
            m0: self.m0,
            k0: self.k0,
            steps_mode: match &self.k_table {
                Some(t) => StepsMode::Table(t.clone()),
                None => StepsMode::Constant,
            },
            refinement: self.refinement,
            base_steps: self.base_steps,
            seed: self.seed,
        }
    }

    pub fn plan_path(&self) -> PathBuf {
        self.plan_file.clone().unwrap_or_else(|| self.out_dir.join("plan.csv"))
    }
}
