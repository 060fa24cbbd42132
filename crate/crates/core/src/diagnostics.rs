//! Goodness-of-fit checks on normalized residuals.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub sample_size: usize,
    /// Asymptotic p-value (Stephens' small-sample correction).
    pub p_value: f64,
}

impl KsResult {
    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov survival function `Q(t) = 2 Σ (-1)^{k-1} e^{-2k²t²}`.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against the standard normal.
pub fn ks_standard_normal(values: &[f64]) -> KsResult {
    ks_test(values, standard_normal_cdf)
}

pub fn ks_test(values: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return KsResult { statistic: 0.0, sample_size: 0, p_value: 1.0 };
    }
    let nf = n as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let root = nf.sqrt();
    let p_value = kolmogorov_survival((root + 0.12 + 0.11 / root) * statistic);
    KsResult { statistic, sample_size: n, p_value }
}

/// Fixed-width histogram with explicit underflow and overflow counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(values: &[f64], lower: f64, upper: f64, width: f64) -> Self {
        let bins = ((upper - lower) / width).round() as usize;
        let mut counts = vec![0u64; bins];
        let (mut underflow, mut overflow) = (0, 0);
        for &v in values {
            if v < lower {
                underflow += 1;
            } else if v >= upper {
                overflow += 1;
            } else {
                let b = (((v - lower) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        Self { lower, width, counts, underflow, overflow }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    /// Left edge of bin `i`.
    pub fn edge(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.width
    }
}
