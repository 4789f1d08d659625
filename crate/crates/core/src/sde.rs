//! Milstein path simulation of the parameterized GBM, coupled level
//! samples, exact terminal sampling and the importance-sampled payoff.

use crate::error::{Error, Result};
use crate::model::{call_payoff, validate_params, ParamVector};
use crate::normal;
use crate::rng::{self, RngStream};

/// Scalar SDE `dS = a(S) dt + b(S) dW` with coefficients depending on the
/// parameter vector. Milstein needs `b` and `b * b'`.
pub trait ScalarSde {
    fn drift(&self, s: f64, y: &ParamVector) -> f64;
    fn diffusion(&self, s: f64, y: &ParamVector) -> f64;
    /// `b(S) * b'(S)`.
    fn diffusion_dd(&self, s: f64, y: &ParamVector) -> f64;
}

/// Geometric Brownian motion: `a(S) = mu S`, `b(S) = sigma S`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Gbm;

impl ScalarSde for Gbm {
    #[inline]
    fn drift(&self, s: f64, y: &ParamVector) -> f64 {
        y.mu * s
    }
    #[inline]
    fn diffusion(&self, s: f64, y: &ParamVector) -> f64 {
        y.sigma * s
    }
    #[inline]
    fn diffusion_dd(&self, s: f64, y: &ParamVector) -> f64 {
        y.sigma * y.sigma * s
    }
}

/// Discretization level: `n0 * H^level` steps over `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelSpec {
    pub level: u32,
    pub refinement: u32,
    pub base_steps: u32,
}

impl LevelSpec {
    pub fn new(level: u32, refinement: u32, base_steps: u32) -> Result<Self> {
        let spec = LevelSpec {
            level,
            refinement,
            base_steps,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default geometry `H = 2`, `n0 = 1`, so `h_l = 2^-l T`.
    pub fn dyadic(level: u32) -> Self {
        LevelSpec {
            level,
            refinement: 2,
            base_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.refinement < 2 {
            return Err(Error::domain("refinement", format!("{} < 2", self.refinement)));
        }
        if self.base_steps < 1 {
            return Err(Error::domain("base_steps", "must be at least 1"));
        }
        rng::check_level_fits(self.level)?;
        match self.checked_steps() {
            Some(n) if n <= 1 << 32 => Ok(()),
            _ => Err(Error::domain("level", format!("{} steps overflow the sample budget", self.level))),
        }
    }

    fn checked_steps(&self) -> Option<u64> {
        (self.refinement as u64)
            .checked_pow(self.level)?
            .checked_mul(self.base_steps as u64)
    }

    /// Time steps of the fine path at this level.
    pub fn steps(&self) -> u64 {
        self.base_steps as u64 * (self.refinement as u64).pow(self.level)
    }

    pub fn step_width(&self, maturity: f64) -> f64 {
        maturity / self.steps() as f64
    }

    pub fn at_level(&self, level: u32) -> Self {
        LevelSpec { level, ..*self }
    }

    /// Normals consumed by one path or one coupled level sample.
    pub fn draws_per_sample(&self) -> u64 {
        self.steps()
    }

    /// Fine plus coarse time steps simulated for one level sample.
    pub fn cost_per_sample(&self) -> f64 {
        let fine = self.steps() as f64;
        if self.level == 0 {
            fine
        } else {
            fine + fine / self.refinement as f64
        }
    }
}

/// One training pair `(y, Y_l(y))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSample {
    pub input: ParamVector,
    pub value: f64,
    pub level: u32,
}

/// One Milstein step driven by a Brownian increment `dw`.
#[inline]
pub fn milstein_increment<M: ScalarSde>(model: &M, s: f64, y: &ParamVector, h: f64, dw: f64) -> f64 {
    s + model.drift(s, y) * h + model.diffusion(s, y) * dw + 0.5 * model.diffusion_dd(s, y) * (dw * dw - h)
}

/// One GBM Milstein step with increment `sqrt(h) z`.
#[inline]
pub fn milstein_step(s: f64, y: &ParamVector, h: f64, z: f64) -> f64 {
    milstein_increment(&Gbm, s, y, h, h.sqrt() * z)
}

/// Coarse Brownian increment built from the fine increments it spans.
#[inline]
pub fn coarse_increment(fine_increments: &[f64]) -> f64 {
    fine_increments.iter().sum()
}

/// Standard normals pulled from a stream in small blocks, never reading
/// past the announced total so the stream advances by exactly that count.
struct Normals<'a> {
    stream: &'a mut RngStream,
    remaining: u64,
    buf: [f64; 32],
    pos: usize,
    len: usize,
}

impl<'a> Normals<'a> {
    fn new(stream: &'a mut RngStream, total: u64) -> Self {
        Normals {
            stream,
            remaining: total,
            buf: [0.0; 32],
            pos: 0,
            len: 0,
        }
    }
}

impl Iterator for Normals<'_> {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        if self.pos == self.len {
            if self.remaining == 0 {
                return None;
            }
            let n = self.remaining.min(self.buf.len() as u64) as usize;
            self.stream.fill_standard_normals(&mut self.buf[..n]);
            self.remaining -= n as u64;
            self.pos = 0;
            self.len = n;
        }
        let z = self.buf[self.pos];
        self.pos += 1;
        Some(z)
    }
}

#[inline]
fn check_state(s: f64, step: u64, steps: u64) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::SimulationOverflow {
            step: step as usize,
            steps: steps as usize,
            state: s,
        })
    }
}

/// Terminal Milstein state on `steps` uniform steps; the iterator must
/// yield at least `steps` normals.
fn terminal_state<M: ScalarSde>(
    model: &M,
    y: &ParamVector,
    steps: u64,
    zs: &mut impl Iterator<Item = f64>,
) -> Result<f64> {
    let h = y.maturity / steps as f64;
    let sqrt_h = h.sqrt();
    let mut s = y.s0;
    for k in 0..steps {
        let z = zs.next().expect("normal source exhausted");
        s = milstein_increment(model, s, y, h, sqrt_h * z);
        check_state(s, k, steps)?;
    }
    Ok(s)
}

/// Fine and coarse terminal states driven by one Brownian path. Returns
/// `(fine, coarse, W_T)`.
fn coupled_terminal_states<M: ScalarSde>(
    model: &M,
    y: &ParamVector,
    spec: &LevelSpec,
    zs: &mut impl Iterator<Item = f64>,
) -> Result<(f64, f64, f64)> {
    let steps = spec.steps();
    let r = spec.refinement as u64;
    let hf = y.maturity / steps as f64;
    let hc = hf * r as f64;
    let sqrt_hf = hf.sqrt();
    let (mut fine, mut coarse, mut w) = (y.s0, y.s0, 0.0);
    for c in 0..steps / r {
        let mut dwc = 0.0;
        for _ in 0..r {
            let dw = sqrt_hf * zs.next().expect("normal source exhausted");
            fine = milstein_increment(model, fine, y, hf, dw);
            dwc += dw;
        }
        coarse = milstein_increment(model, coarse, y, hc, dwc);
        w += dwc;
        check_state(fine, (c + 1) * r - 1, steps)?;
        check_state(coarse, (c + 1) * r - 1, steps)?;
    }
    Ok((fine, coarse, w))
}

/// `P_h(y)` with the normals supplied explicitly; uses the first
/// `spec.steps()` entries of `zs`.
pub fn payoff_from_normals(y: &ParamVector, spec: &LevelSpec, zs: &[f64]) -> Result<f64> {
    assert!(zs.len() as u64 >= spec.steps(), "need {} normals", spec.steps());
    let s = terminal_state(&Gbm, y, spec.steps(), &mut zs.iter().copied())?;
    Ok(call_payoff(s, y.strike))
}

/// `Y_l(y)` with the normals supplied explicitly.
pub fn level_value_from_normals(y: &ParamVector, spec: &LevelSpec, zs: &[f64]) -> Result<f64> {
    if spec.level == 0 {
        return payoff_from_normals(y, spec, zs);
    }
    assert!(zs.len() as u64 >= spec.steps(), "need {} normals", spec.steps());
    let (fine, coarse, _) = coupled_terminal_states(&Gbm, y, spec, &mut zs.iter().copied())?;
    Ok(call_payoff(fine, y.strike) - call_payoff(coarse, y.strike))
}

/// One payoff sample `P_h(y)` at the level's step width. Consumes exactly
/// `spec.steps()` normals.
pub fn simulate_payoff_path(y: &ParamVector, spec: &LevelSpec, stream: &mut RngStream) -> Result<f64> {
    let steps = spec.steps();
    let s = terminal_state(&Gbm, y, steps, &mut Normals::new(stream, steps))?;
    Ok(call_payoff(s, y.strike))
}

/// One coupled level-estimator value: `P_{h_0}` at level 0, otherwise
/// `P_{h_l} - P_{h_{l-1}}` on a shared Brownian path. Consumes exactly
/// `spec.steps()` normals.
pub fn simulate_level_value(y: &ParamVector, spec: &LevelSpec, stream: &mut RngStream) -> Result<f64> {
    if spec.level == 0 {
        return simulate_payoff_path(y, spec, stream);
    }
    let steps = spec.steps();
    let (fine, coarse, _) = coupled_terminal_states(&Gbm, y, spec, &mut Normals::new(stream, steps))?;
    Ok(call_payoff(fine, y.strike) - call_payoff(coarse, y.strike))
}

pub fn simulate_level_sample(y: &ParamVector, spec: &LevelSpec, stream: &mut RngStream) -> Result<LevelSample> {
    validate_params(*y)?;
    let value = simulate_level_value(y, spec, stream)?;
    Ok(LevelSample {
        input: *y,
        value,
        level: spec.level,
    })
}

/// `P_h(y) - V(S_T)` where `S_T` is the exact GBM solution on the same
/// Brownian path. Its mean is the weak error of the scheme and its variance
/// is the strong error, far below the payoff variance.
pub fn weak_error_sample(y: &ParamVector, spec: &LevelSpec, stream: &mut RngStream) -> Result<f64> {
    let steps = spec.steps();
    let h = y.maturity / steps as f64;
    let sqrt_h = h.sqrt();
    let mut zs = Normals::new(stream, steps);
    let (mut s, mut w) = (y.s0, 0.0);
    for k in 0..steps {
        let dw = sqrt_h * zs.next().expect("normal source exhausted");
        s = milstein_increment(&Gbm, s, y, h, dw);
        w += dw;
        check_state(s, k, steps)?;
    }
    let exact = y.s0 * ((y.mu - 0.5 * y.sigma * y.sigma) * y.maturity + y.sigma * w).exp();
    Ok(call_payoff(s, y.strike) - call_payoff(exact, y.strike))
}

/// Exact GBM terminal value for a given standard normal.
#[inline]
pub fn gbm_terminal_from_normal(y: &ParamVector, z: f64) -> f64 {
    y.s0 * ((y.mu - 0.5 * y.sigma * y.sigma) * y.maturity + y.sigma * y.maturity.sqrt() * z).exp()
}

/// `s0 exp((mu - sigma^2/2) T + sigma sqrt(T) Z)`; consumes one normal.
pub fn exact_gbm_terminal(y: &ParamVector, stream: &mut RngStream) -> f64 {
    gbm_terminal_from_normal(y, stream.next_standard_normal())
}

/// Standardized log-strike `z*`: `S_T > K` iff `Z > z*`.
fn strike_threshold(y: &ParamVector) -> f64 {
    ((y.strike / y.s0).ln() - (y.mu - 0.5 * y.sigma * y.sigma) * y.maturity) / (y.sigma * y.maturity.sqrt())
}

/// Exceedance probability `q = P(S_T > K)` under the exact law.
pub fn exceedance_probability(y: &ParamVector) -> f64 {
    normal::sf(strike_threshold(y))
}

/// Importance-sampled payoff for a given uniform: `Z` is drawn from the
/// normal law conditioned on `Z > z*` and the payoff is weighted by `q`.
pub fn importance_payoff_from_uniform(y: &ParamVector, u: f64) -> Result<f64> {
    if !(y.sigma > 0.0) {
        return Err(Error::domain("sigma", "importance sampling needs sigma > 0"));
    }
    if !(y.strike > 0.0) {
        return Err(Error::domain("strike", "importance sampling needs strike > 0"));
    }
    let q = exceedance_probability(y);
    if !(q > 0.0) {
        return Err(Error::ImportanceWeightUnderflow { q, strike: y.strike });
    }
    // Φ^{-1}(1 - q + q u) = -Φ^{-1}(q (1 - u)); the right side keeps full
    // precision when q is small.
    let z = -normal::quantile(q * (1.0 - u));
    Ok(q * call_payoff(gbm_terminal_from_normal(y, z), y.strike))
}

/// Unbiased importance-sampled estimate of `E[max(S_T - K, 0)]`; consumes
/// one uniform.
pub fn importance_sampled_payoff(y: &ParamVector, stream: &mut RngStream) -> Result<f64> {
    importance_payoff_from_uniform(y, stream.next_uniform())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;

    fn y_ref() -> ParamVector {
        ParamVector::reference()
    }

    #[test]
    fn milstein_step_examples() {
        let y = y_ref();
        assert!((milstein_step(100.0, &y, 0.25, 0.0) - 100.75).abs() < 1e-12);
        assert!((milstein_step(100.0, &y, 0.25, 1.0) - 111.25).abs() < 1e-12);
        let flat = ParamVector::new(0.05, 0.0, 100.0, 1.0, 110.0);
        assert_eq!(milstein_step(100.0, &flat, 0.25, 1.7), 100.0 * (1.0 + 0.05 * 0.25));
    }

    #[test]
    fn zero_volatility_path_is_euler_product() {
        let y = ParamVector::new(0.05, 0.0, 100.0, 1.0, 0.0);
        let mut s = seed_stream(3, 9);
        let v = simulate_payoff_path(&y, &LevelSpec::dyadic(0), &mut s).unwrap();
        assert!((v - 105.0).abs() < 1e-12);
        let v3 = simulate_payoff_path(&y, &LevelSpec::dyadic(3), &mut s).unwrap();
        assert!((v3 - 100.0 * (1.0 + 0.05 / 8.0f64).powi(8)).abs() < 1e-10);
    }

    #[test]
    fn coupled_sample_hand_example() {
        let y = ParamVector::new(0.0, 0.2, 100.0, 1.0, 0.0);
        let spec = LevelSpec::new(1, 2, 1).unwrap();
        let v = level_value_from_normals(&y, &spec, &[0.0, 0.0]).unwrap();
        assert!((v - 0.01).abs() < 1e-10, "{v}");
    }

    #[test]
    fn level_zero_equals_payoff_path() {
        let y = y_ref();
        let spec = LevelSpec::new(0, 2, 4).unwrap();
        let mut a = seed_stream(11, 5);
        let mut b = a;
        let p = simulate_payoff_path(&y, &spec, &mut a).unwrap();
        let l = simulate_level_sample(&y, &spec, &mut b).unwrap();
        assert_eq!(p.to_bits(), l.value.to_bits());
        assert_eq!(l.level, 0);
    }

    #[test]
    fn draw_counts_are_exact() {
        let y = y_ref();
        for (level, h, n0) in [(0, 2, 1), (3, 2, 1), (2, 3, 2), (5, 2, 1)] {
            let spec = LevelSpec::new(level, h, n0).unwrap();
            let mut s = seed_stream(1, 2);
            simulate_level_value(&y, &spec, &mut s).unwrap();
            assert_eq!(s.counter, spec.draws_per_sample());
            let mut s = seed_stream(1, 2);
            simulate_payoff_path(&y, &spec, &mut s).unwrap();
            assert_eq!(s.counter, spec.steps());
        }
        let mut s = seed_stream(1, 2);
        exact_gbm_terminal(&y, &mut s);
        importance_sampled_payoff(&y, &mut s).unwrap();
        assert_eq!(s.counter, 2);
    }

    #[test]
    fn stream_and_slice_paths_agree() {
        let y = y_ref();
        let spec = LevelSpec::dyadic(4);
        let mut s = seed_stream(5, 5);
        let mut zs = vec![0.0; spec.steps() as usize];
        s.fill_standard_normals(&mut zs);
        let from_slice = level_value_from_normals(&y, &spec, &zs).unwrap();
        let from_stream = simulate_level_value(&y, &spec, &mut seed_stream(5, 5)).unwrap();
        assert_eq!(from_slice.to_bits(), from_stream.to_bits());
    }

    #[test]
    fn exact_terminal_limits() {
        let flat = ParamVector::new(0.05, 0.0, 100.0, 1.0, 110.0);
        let mut s = seed_stream(1, 1);
        assert!((exact_gbm_terminal(&flat, &mut s) - 100.0 * 0.05f64.exp()).abs() < 1e-12);
        let y = y_ref();
        assert!((gbm_terminal_from_normal(&y, 0.0) - 100.0 * (0.05 - 0.02f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn overflow_is_reported() {
        let wild = ParamVector::new(700.0, 0.0, 1e307, 1.0, 0.0);
        let err = simulate_payoff_path(&wild, &LevelSpec::dyadic(0), &mut seed_stream(1, 1)).unwrap_err();
        assert!(matches!(err, Error::SimulationOverflow { .. }));
    }

    #[test]
    fn importance_sampling_domain() {
        let y = y_ref();
        let mut no_vol = y;
        no_vol.sigma = 0.0;
        assert!(importance_payoff_from_uniform(&no_vol, 0.5).is_err());
        let mut no_strike = y;
        no_strike.strike = 0.0;
        assert!(importance_payoff_from_uniform(&no_strike, 0.5).is_err());
        let mut far = y;
        far.strike = 1e9;
        assert!(matches!(
            importance_payoff_from_uniform(&far, 0.5),
            Err(Error::ImportanceWeightUnderflow { .. })
        ));
        for i in 1..1000 {
            assert!(importance_payoff_from_uniform(&y, i as f64 / 1000.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn importance_sampling_small_strike_limit() {
        // q -> 1 and the estimator becomes the plain payoff S_T - K.
        let y = ParamVector::new(0.05, 0.2, 100.0, 1.0, 1e-6);
        let q = exceedance_probability(&y);
        assert!(q > 1.0 - 1e-12);
        let u = 0.3;
        let plain = gbm_terminal_from_normal(&y, -normal::quantile(1.0 - u)) - y.strike;
        assert!((importance_payoff_from_uniform(&y, u).unwrap() - plain).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        assert!(LevelSpec::new(0, 1, 1).is_err());
        assert!(LevelSpec::new(0, 2, 0).is_err());
        assert!(LevelSpec::new(40, 2, 1).is_err());
        assert_eq!(LevelSpec::dyadic(7).step_width(1.0), 1.0 / 128.0);
        assert_eq!(LevelSpec::dyadic(3).cost_per_sample(), 12.0);
    }
}
