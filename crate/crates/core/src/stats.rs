//! Small statistical helpers: binomial confidence bounds, KS distance, moments.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// One-sided 99% standard normal quantile.
pub const Z99: f64 = 2.326_347_874_040_840_8;

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").cdf(x)
}

/// A binomial proportion with a Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Proportion {
    /// Wilson interval at normal quantile `z` (each side).
    pub fn wilson(successes: u64, trials: u64, z: f64) -> Self {
        if trials == 0 {
            return Proportion { successes, trials, estimate: 0.0, lower: 0.0, upper: 1.0 };
        }
        let n = trials as f64;
        let p = successes as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Proportion { successes, trials, estimate: p, lower: (centre - half).max(0.0), upper: (centre + half).min(1.0) }
    }

    /// Wilson interval whose lower end is a one-sided 99% bound.
    pub fn lcb99(successes: u64, trials: u64) -> Self {
        Self::wilson(successes, trials, Z99)
    }

    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            return f64::INFINITY;
        }
        (self.estimate * (1.0 - self.estimate) / self.trials as f64).sqrt()
    }
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Sample mean, unbiased variance and fourth central moment.
pub fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in xs {
        let d = (x - mean) * (x - mean);
        m2 += d;
        m4 += d * d;
    }
    (mean, m2 / (n - 1.0), m4 / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_estimate() {
        let p = Proportion::lcb99(400, 1000);
        assert!(p.lower < 0.4 && p.upper > 0.4);
        assert!((p.estimate - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 2000;
        let mut xs: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                statrs::distribution::Normal::new(0.0, 1.0).unwrap().inverse_cdf(u)
            })
            .collect();
        assert!(ks_statistic(&mut xs, normal_cdf) <= 0.5 / n as f64 + 1e-9);
    }
}
