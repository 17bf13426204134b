//! Monte Carlo summaries with order-fixed compensated summation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{path_rng, Purpose};

/// Number of bootstrap resamples for log-space estimates.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Two-sided normal quantile used for `ci95`.
const Z95: f64 = 1.959_963_984_540_054;

/// Neumaier-compensated sum in iteration order.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn mean(xs: &[f64]) -> f64 {
    neumaier_sum(xs.iter().copied()) / xs.len() as f64
}

/// `log(mean(exp(xs)))` without overflow.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    neumaier_sum(xs.iter().map(|x| (x - m).exp())).ln() + m - (xs.len() as f64).ln()
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub ci95: (f64, f64),
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidParameter(format!("an estimate needs n >= 2 samples, got {n}")));
        }
        if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite sample {bad}")));
        }
        let m = mean(xs);
        let var = neumaier_sum(xs.iter().map(|x| (x - m) * (x - m))) / (n - 1) as f64;
        Ok(Self::new(m, (var / n as f64).sqrt(), n))
    }

    pub fn new(mean: f64, stderr: f64, n: usize) -> Self {
        Self {
            mean,
            stderr,
            n,
            ci95: (mean - Z95 * stderr, mean + Z95 * stderr),
        }
    }

    /// Same estimate multiplied by a constant.
    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.mean * s, self.stderr * s.abs(), self.n)
    }

    /// `|mean - other.mean|` in units of the combined standard error (0 when both are exact).
    pub fn sigmas_from(&self, other: &Estimate) -> f64 {
        let d = (self.mean - other.mean).abs();
        let s = self.stderr.hypot(other.stderr);
        if d == 0.0 {
            0.0
        } else {
            d / s
        }
    }

    pub fn agrees_with(&self, other: &Estimate, sigmas: f64) -> bool {
        (self.mean - other.mean).abs() <= sigmas * self.stderr.hypot(other.stderr)
    }
}

/// Estimate of `E exp(s)` from exponent samples `s`, aggregated in log space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMeanExp {
    /// `log` of the sample mean of `exp(s)`.
    pub log_mean: f64,
    /// Standard error of the sample mean of `exp(s)`, relative to that mean.
    pub rel_stderr: f64,
    pub n: usize,
    /// Percentile bootstrap interval for `log_mean`.
    pub bootstrap_ci95: (f64, f64),
}

impl LogMeanExp {
    pub fn from_exponents(s: &[f64], seed: u64) -> Result<Self> {
        let n = s.len();
        if n < 2 {
            return Err(Error::InvalidParameter(format!("an estimate needs n >= 2 samples, got {n}")));
        }
        if let Some(bad) = s.iter().find(|x| !x.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite exponent {bad}")));
        }
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
        let est = Estimate::from_samples(&e)?;
        let mut rng = path_rng(seed, Purpose::Bootstrap, 0);
        let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                let sum = neumaier_sum((0..n).map(|_| e[rng.random_range(0..n)]));
                (sum / n as f64).ln() + m
            })
            .collect();
        boot.sort_by(f64::total_cmp);
        let lo = boot[(0.025 * BOOTSTRAP_RESAMPLES as f64) as usize];
        let hi = boot[((0.975 * BOOTSTRAP_RESAMPLES as f64) as usize).min(BOOTSTRAP_RESAMPLES - 1)];
        Ok(Self {
            log_mean: est.mean.ln() + m,
            rel_stderr: est.stderr / est.mean,
            n,
            bootstrap_ci95: (lo, hi),
        })
    }

    /// Linear-space view; overflows to infinity for huge exponents.
    pub fn estimate(&self) -> Estimate {
        let mean = self.log_mean.exp();
        Estimate::new(mean, mean * self.rel_stderr, self.n)
    }
}

/// Effective sample size `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s = neumaier_sum(w.iter().copied());
    let s2 = neumaier_sum(w.iter().map(|x| x * x));
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Weighted least-squares slope of `y` on `x` with weights `w`, and its standard error.
pub fn weighted_slope(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 3 || x.len() != y.len() || x.len() != w.len() {
        return Err(Error::InvalidParameter(format!(
            "a slope fit needs at least 3 matched points, got {}",
            x.len()
        )));
    }
    let sw = neumaier_sum(w.iter().copied());
    let xm = neumaier_sum(x.iter().zip(w).map(|(a, b)| a * b)) / sw;
    let ym = neumaier_sum(y.iter().zip(w).map(|(a, b)| a * b)) / sw;
    let sxx = neumaier_sum(x.iter().zip(w).map(|(a, b)| b * (a - xm) * (a - xm)));
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("slope fit needs distinct abscissae".into()));
    }
    let sxy = neumaier_sum(x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)));
    let slope = sxy / sxx;
    let rss = neumaier_sum(
        x.iter()
            .zip(y)
            .zip(w)
            .map(|((a, c), b)| b * (c - ym - slope * (a - xm)).powi(2)),
    );
    let se = (rss / (x.len() - 2) as f64 / sxx).sqrt();
    Ok((slope, se))
}
