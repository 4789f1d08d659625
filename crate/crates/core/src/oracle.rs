//! Closed-form reference prices and sampled error measurement of surrogates.

use crate::error::{Error, Result};
use crate::model::{ParamVector, TrainingBox};
use crate::normal;
use crate::par;
use crate::rng::{sample_box_unchecked, RngStream};

/// Undiscounted Black-Scholes expectation `E[max(S_T - K, 0)]` under GBM.
pub fn bs_expected_payoff(y: &ParamVector) -> Result<f64> {
    if !(y.s0 > 0.0) {
        return Err(Error::domain("s0", format!("{} <= 0", y.s0)));
    }
    if !(y.strike >= 0.0) {
        return Err(Error::domain("strike", format!("{} < 0", y.strike)));
    }
    if !(y.maturity >= 0.0) || !(y.sigma >= 0.0) {
        return Err(Error::domain("sigma", "volatility and maturity must be non-negative"));
    }
    let forward = y.s0 * (y.mu * y.maturity).exp();
    if y.strike == 0.0 {
        return Ok(forward);
    }
    let vol = y.sigma * y.maturity.sqrt();
    if vol < 1e-12 {
        return Ok((forward - y.strike).max(0.0));
    }
    let d1 = ((y.s0 / y.strike).ln() + (y.mu + 0.5 * y.sigma * y.sigma) * y.maturity) / vol;
    let d2 = d1 - vol;
    Ok(forward * normal::cdf(d1) - y.strike * normal::cdf(d2))
}

/// Sampled L-infinity and L1 deviation of a surrogate from the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub n_test: u64,
    pub linf: f64,
    pub l1: f64,
    pub argmax_point: ParamVector,
    pub seed: u64,
}

#[derive(Clone, Copy)]
struct Partial {
    max: f64,
    argmax: ParamVector,
    sum: f64,
}

/// Compares `net` with the closed form at `n_test` points drawn uniformly
/// from the box; test point `i` uses the substream `stream.for_sample(i)`.
/// Ties for the maximum resolve to the lowest index.
pub fn measure_error<F>(net: F, bx: &TrainingBox, n_test: u64, stream: RngStream) -> Result<ErrorReport>
where
    F: Fn(&ParamVector) -> f64 + Sync + Send,
{
    if n_test == 0 {
        return Err(Error::domain("n_test", "must be at least 1"));
    }
    bx.validate()?;
    let parts = par::try_map_chunks(n_test as usize, |range| {
        let mut acc = Partial {
            max: -1.0,
            argmax: bx.lower(),
            sum: 0.0,
        };
        for i in range {
            let mut s = stream.for_sample(i as u64);
            let y = sample_box_unchecked(&mut s, bx);
            let err = (bs_expected_payoff(&y)? - net(&y)).abs();
            // NaN compares false; a non-finite surrogate must still register.
            let err = if err.is_nan() { f64::INFINITY } else { err };
            if err > acc.max {
                acc.max = err;
                acc.argmax = y;
            }
            acc.sum += err;
        }
        Ok(acc)
    })?;
    let total = par::reduce_pairwise(parts, |a, b| Partial {
        max: if b.max > a.max { b.max } else { a.max },
        argmax: if b.max > a.max { b.argmax } else { a.argmax },
        sum: a.sum + b.sum,
    })
    .expect("n_test >= 1");
    Ok(ErrorReport {
        n_test,
        linf: total.max,
        l1: total.sum / n_test as f64,
        argmax_point: total.argmax,
        seed: stream.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seed_stream, stream_id, Phase};

    // Pinned with 40-digit closed form and, independently, adaptive
    // quadrature of the payoff against the lognormal density (both agree to
    // all printed digits).
    const REFERENCE_PRICE: f64 = 6.349_770_070_343_007;

    #[test]
    fn reference_price() {
        let v = bs_expected_payoff(&ParamVector::reference()).unwrap();
        assert!((v - REFERENCE_PRICE).abs() < 1e-11, "{v}");
    }

    #[test]
    fn limits() {
        let zero_k = ParamVector::new(0.05, 0.2, 100.0, 1.0, 0.0);
        assert_eq!(bs_expected_payoff(&zero_k).unwrap(), 100.0 * 0.05f64.exp());
        let flat_otm = ParamVector::new(0.05, 0.0, 100.0, 1.0, 110.0);
        assert_eq!(bs_expected_payoff(&flat_otm).unwrap(), 0.0);
        let flat_itm = ParamVector::new(0.05, 0.0, 100.0, 1.0, 100.0);
        assert!((bs_expected_payoff(&flat_itm).unwrap() - (100.0 * 0.05f64.exp() - 100.0)).abs() < 1e-12);
        assert!(bs_expected_payoff(&ParamVector::new(0.05, 0.2, 0.0, 1.0, 110.0)).is_err());
        assert!(bs_expected_payoff(&ParamVector::new(0.05, 0.2, 100.0, 1.0, -1.0)).is_err());
    }

    #[test]
    fn monotone_and_bounded_on_box() {
        let bx = TrainingBox::standard();
        let mut s = seed_stream(17, 17);
        for _ in 0..500 {
            let y = sample_box_unchecked(&mut s, &bx);
            let p = bs_expected_payoff(&y).unwrap();
            let fwd = y.s0 * (y.mu * y.maturity).exp();
            assert!(p >= 0.0 && p <= fwd);
            let mut up = y;
            up.s0 += 0.5;
            assert!(bs_expected_payoff(&up).unwrap() >= p);
            let mut k_up = y;
            k_up.strike += 0.5;
            assert!(bs_expected_payoff(&k_up).unwrap() <= p);
        }
    }

    fn stream() -> RngStream {
        seed_stream(5, stream_id(Phase::Evaluate, 0, 0, 0))
    }

    #[test]
    fn identity_and_shift() {
        let bx = TrainingBox::standard();
        let exact = measure_error(|y: &ParamVector| bs_expected_payoff(y).unwrap(), &bx, 1000, stream()).unwrap();
        assert_eq!(exact.linf, 0.0);
        let shifted =
            measure_error(|y: &ParamVector| bs_expected_payoff(y).unwrap() + 0.5, &bx, 1000, stream()).unwrap();
        assert!((shifted.linf - 0.5).abs() < 1e-12 && (shifted.l1 - 0.5).abs() < 1e-12);
        assert!(measure_error(|_: &ParamVector| 0.0, &bx, 0, stream()).is_err());
    }

    #[test]
    fn zero_net_error_is_bounded_by_grid_maximum() {
        // Grid scan oracle of the price maximum over the box.
        let bx = TrainingBox::standard();
        let steps = 9;
        let mut grid_max: f64 = 0.0;
        let mut idx = [0usize; 5];
        loop {
            let mut a = [0.0; 5];
            for k in 0..5 {
                let (lo, hi) = bx.bounds[k];
                a[k] = lo + (hi - lo) * idx[k] as f64 / (steps - 1) as f64;
            }
            grid_max = grid_max.max(bs_expected_payoff(&ParamVector::from_array(a)).unwrap());
            let mut k = 0;
            while k < 5 {
                idx[k] += 1;
                if idx[k] < steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == 5 {
                break;
            }
        }
        let r = measure_error(|_: &ParamVector| 0.0, &bx, 100_000, stream()).unwrap();
        assert!(r.linf <= grid_max + 1e-12);
        // The maximum sits at a corner; 1e5 uniform points stay about 0.1
        // unit coordinates away from it. Over 200 independent replicates the
        // shortfall had mean 0.70 and never exceeded 1.07.
        assert!(r.linf >= grid_max - 1.5, "{} vs {grid_max}", r.linf);
        assert!(r.l1 <= r.linf);
    }

    #[test]
    fn measurement_is_deterministic() {
        let bx = TrainingBox::standard();
        let net = |y: &ParamVector| 0.01 * y.s0;
        let a = measure_error(net, &bx, 5000, stream()).unwrap();
        let b = measure_error(net, &bx, 5000, stream()).unwrap();
        assert_eq!(a, b);
    }
}
