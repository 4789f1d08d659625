//! Parameterized model family: geometric Brownian motion with a European
//! call payoff, and the box of parameter vectors the surrogate is trained on.

use crate::error::{Error, Result};

/// Number of input coordinates of a parameter vector.
pub const DIM: usize = 5;

/// Coordinate names in storage order.
pub const FIELDS: [&str; DIM] = ["mu", "sigma", "s0", "maturity", "strike"];

/// One input point `(mu, sigma, s0, T, K)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamVector {
    pub mu: f64,
    pub sigma: f64,
    pub s0: f64,
    pub maturity: f64,
    pub strike: f64,
}

impl ParamVector {
    pub const fn new(mu: f64, sigma: f64, s0: f64, maturity: f64, strike: f64) -> Self {
        ParamVector {
            mu,
            sigma,
            s0,
            maturity,
            strike,
        }
    }

    /// The representative point used by the planner, `(0.05, 0.2, 100, 1, 110)`.
    pub const fn reference() -> Self {
        ParamVector::new(0.05, 0.2, 100.0, 1.0, 110.0)
    }

    pub fn from_array(a: [f64; DIM]) -> Self {
        ParamVector::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(&self) -> [f64; DIM] {
        [self.mu, self.sigma, self.s0, self.maturity, self.strike]
    }
}

/// Returns `y` unchanged if it is a valid model input.
pub fn validate_params(y: ParamVector) -> Result<ParamVector> {
    for (name, v) in FIELDS.iter().zip(y.to_array()) {
        if !v.is_finite() {
            return Err(Error::domain(name, format!("{v} is not finite")));
        }
    }
    if y.sigma < 0.0 {
        return Err(Error::domain("sigma", format!("{} < 0", y.sigma)));
    }
    if y.s0 <= 0.0 {
        return Err(Error::domain("s0", format!("{} <= 0", y.s0)));
    }
    if y.maturity <= 0.0 {
        return Err(Error::domain("maturity", format!("{} <= 0", y.maturity)));
    }
    if y.strike < 0.0 {
        return Err(Error::domain("strike", format!("{} < 0", y.strike)));
    }
    Ok(y)
}

/// European call payoff `max(S - K, 0)`.
#[inline]
pub fn call_payoff(terminal_value: f64, strike: f64) -> f64 {
    (terminal_value - strike).max(0.0)
}

/// Closed intervals per coordinate, in [`FIELDS`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingBox {
    pub bounds: [(f64, f64); DIM],
}

impl TrainingBox {
    pub fn new(bounds: [(f64, f64); DIM]) -> Result<Self> {
        let bx = TrainingBox { bounds };
        bx.validate()?;
        Ok(bx)
    }

    /// `[0.02,0.05] x [0.1,0.2] x [80,120] x [0.9,1.0] x [109,110]`.
    pub fn standard() -> Self {
        TrainingBox {
            bounds: [(0.02, 0.05), (0.1, 0.2), (80.0, 120.0), (0.9, 1.0), (109.0, 110.0)],
        }
    }

    /// The small box of the batch-size and importance-sampling studies:
    /// `s0` in `[100,104]`, the rest fixed at `(0.05, 0.2, ., 1, 110)`.
    pub fn reduced() -> Self {
        TrainingBox {
            bounds: [(0.05, 0.05), (0.2, 0.2), (100.0, 104.0), (1.0, 1.0), (110.0, 110.0)],
        }
    }

    /// Degenerate box holding a single point.
    pub fn point(y: &ParamVector) -> Self {
        let a = y.to_array();
        TrainingBox {
            bounds: a.map(|v| (v, v)),
        }
    }

    pub(crate) fn check_order(&self) -> Result<()> {
        for (name, (lo, hi)) in FIELDS.iter().zip(self.bounds) {
            if !(lo <= hi) {
                return Err(Error::domain(name, format!("box interval [{lo}, {hi}] is empty")));
            }
        }
        Ok(())
    }

    /// Interval order plus model validity of every point in the box.
    pub fn validate(&self) -> Result<()> {
        self.check_order()?;
        validate_params(self.lower())?;
        validate_params(self.upper())?;
        Ok(())
    }

    pub fn lower(&self) -> ParamVector {
        ParamVector::from_array(self.bounds.map(|b| b.0))
    }

    pub fn upper(&self) -> ParamVector {
        ParamVector::from_array(self.bounds.map(|b| b.1))
    }

    pub fn contains(&self, y: &ParamVector) -> bool {
        self.bounds
            .iter()
            .zip(y.to_array())
            .all(|(&(lo, hi), v)| lo <= v && v <= hi)
    }

    /// Affine map of `y` onto the unit cube. Degenerate coordinates map to 0.
    #[inline]
    pub fn to_unit(&self, y: &ParamVector) -> [f64; DIM] {
        let a = y.to_array();
        let mut out = [0.0; DIM];
        for k in 0..DIM {
            let (lo, hi) = self.bounds[k];
            out[k] = if hi > lo { (a[k] - lo) / (hi - lo) } else { 0.0 };
        }
        out
    }

    /// Distinct corner points; degenerate axes contribute a single value.
    pub fn corners(&self) -> Vec<ParamVector> {
        let mut out: Vec<[f64; DIM]> = vec![[0.0; DIM]];
        for k in 0..DIM {
            let (lo, hi) = self.bounds[k];
            let values: &[f64] = if lo == hi { &[lo] } else { &[lo, hi] };
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p;
                        q[k] = v;
                        q
                    })
                })
                .collect();
        }
        out.into_iter().map(ParamVector::from_array).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn call_payoff_examples() {
        assert_eq!(call_payoff(120.0, 110.0), 10.0);
        assert_eq!(call_payoff(100.0, 110.0), 0.0);
        assert_eq!(call_payoff(110.0, 110.0), 0.0);
    }

    #[test]
    fn validate_examples() {
        assert!(validate_params(ParamVector::reference()).is_ok());
        let bad_sigma = validate_params(ParamVector::new(0.05, -0.1, 100.0, 1.0, 110.0));
        assert!(matches!(bad_sigma, Err(Error::Domain { field: "sigma", .. })));
        let bad_t = validate_params(ParamVector::new(0.05, 0.2, 100.0, 0.0, 110.0));
        assert!(matches!(bad_t, Err(Error::Domain { field: "maturity", .. })));
        let bad_nan = validate_params(ParamVector::new(f64::NAN, 0.2, 100.0, 1.0, 110.0));
        assert!(matches!(bad_nan, Err(Error::Domain { field: "mu", .. })));
    }

    #[test]
    fn box_geometry() {
        let bx = TrainingBox::standard();
        assert!(bx.validate().is_ok());
        assert!(bx.contains(&ParamVector::reference()));
        assert_eq!(bx.corners().len(), 32);
        assert_eq!(TrainingBox::reduced().corners().len(), 2);
        let u = bx.to_unit(&bx.upper());
        assert_eq!(u, [1.0; DIM]);
        assert_eq!(TrainingBox::reduced().to_unit(&ParamVector::reference())[0], 0.0);
        let mut neg = bx;
        neg.bounds[2] = (-1.0, 1.0);
        assert!(matches!(neg.validate(), Err(Error::Domain { field: "s0", .. })));
    }

    proptest! {
        #[test]
        fn call_payoff_is_one_lipschitz(a in 0.0..300.0f64, b in 0.0..300.0f64, k in 0.0..200.0f64) {
            prop_assert!((call_payoff(a, k) - call_payoff(b, k)).abs() <= (a - b).abs() + 1e-12);
        }

        #[test]
        fn call_payoff_convex(a in 0.0..300.0f64, b in 0.0..300.0f64, k in 0.0..200.0f64, t in 0.0..1.0f64) {
            let mid = call_payoff(t * a + (1.0 - t) * b, k);
            prop_assert!(mid <= t * call_payoff(a, k) + (1.0 - t) * call_payoff(b, k) + 1e-9);
        }

        #[test]
        fn zero_strike_is_identity(s in 0.0..1e6f64) {
            prop_assert_eq!(call_payoff(s, 0.0), s);
        }
    }
}
