//! Sample moments with a deterministic parallel reduction, and least
//! squares line fits for convergence-rate estimates.

use crate::error::Result;
use crate::par;

/// Count, mean and unbiased variance of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleStats {
    pub n: u64,
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    m2: f64,
}

impl SampleStats {
    pub fn empty() -> Self {
        SampleStats { n: 0, mean: 0.0, m2: 0.0 }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(self, other: SampleStats) -> SampleStats {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        SampleStats { n, mean, m2 }
    }

    /// Unbiased variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut s = SampleStats::empty();
        xs.iter().for_each(|&x| s.push(x));
        s
    }
}

/// Moments of `f(0), ..., f(n-1)` computed in fixed chunks and merged in a
/// fixed tree, independent of the worker count.
pub fn sample_stats<F>(n: u64, f: F) -> Result<SampleStats>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    const BLOCK: u64 = 4096;
    let blocks = n.div_ceil(BLOCK) as usize;
    let parts = par::try_map_range(blocks, |b| {
        let mut s = SampleStats::empty();
        let start = b as u64 * BLOCK;
        for i in start..(start + BLOCK).min(n) {
            s.push(f(i)?);
        }
        Ok(s)
    })?;
    Ok(par::reduce_pairwise(parts, SampleStats::merge).unwrap_or_else(SampleStats::empty))
}

/// Least squares fit `y = slope x + intercept`. Returns `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly).0
}
