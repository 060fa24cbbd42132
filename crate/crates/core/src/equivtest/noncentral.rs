//! Non-central chi-squared CDF as a Poisson mixture of central CDFs.
//!
//! `F(x; k, λ) = Σ_j w_j P(k/2 + j, x/2)` with `w_j` the Poisson(λ/2) masses.
//! The weights depend only on `λ`, so they are tabulated once; each CDF call
//! then needs a single incomplete gamma evaluation at the modal index and
//! walks outwards with the three-term recurrences of `P(a, y)` in `a`.

use crate::error::{Error, Result};
use crate::special::{gamma_kernel, ln_gamma_kernel, regularized_lower_gamma};

/// Mass bound for each neglected Poisson tail.
const TAIL_BOUND: f64 = 1e-14;
/// Largest non-centrality accepted.
pub const MAX_NONCENTRALITY: f64 = 1e7;

#[derive(Debug, Clone)]
pub struct NoncentralChiSquared {
    df: u32,
    lambda: f64,
    weights: PoissonWeights,
}

/// Truncated Poisson masses `w_first ..= w_{first + len - 1}` around the mode.
#[derive(Debug, Clone)]
pub struct PoissonWeights {
    first: usize,
    mode: usize,
    masses: Vec<f64>,
}

impl PoissonWeights {
    pub fn new(mean: f64) -> Self {
        if mean == 0.0 {
            return Self { first: 0, mode: 0, masses: vec![1.0] };
        }
        let mode = mean.floor() as usize;
        let w_mode = ln_gamma_kernel(mode as f64, mean).exp();

        let mut upper = Vec::new();
        let mut w = w_mode;
        let mut j = mode;
        loop {
            let next = w * mean / (j + 1) as f64;
            let ratio = mean / (j + 2) as f64;
            // geometric bound on Σ_{i > j} w_i
            if ratio < 1.0 && next / (1.0 - ratio) < TAIL_BOUND {
                break;
            }
            upper.push(next);
            w = next;
            j += 1;
        }

        let mut lower = Vec::new();
        let mut w = w_mode;
        let mut j = mode;
        while j > 0 {
            let prev = w * j as f64 / mean;
            let ratio = (j - 1) as f64 / mean;
            // geometric bound on Σ_{i < j} w_i
            if ratio < 1.0 && prev / (1.0 - ratio) < TAIL_BOUND {
                break;
            }
            lower.push(prev);
            w = prev;
            j -= 1;
        }

        let first = mode - lower.len();
        let mut masses = Vec::with_capacity(lower.len() + 1 + upper.len());
        masses.extend(lower.into_iter().rev());
        masses.push(w_mode);
        masses.extend(upper);
        Self { first, mode, masses }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Index range `first..=last` kept after truncation.
    pub fn support(&self) -> (usize, usize) {
        (self.first, self.first + self.masses.len() - 1)
    }
}

impl NoncentralChiSquared {
    pub fn new(df: u32, lambda: f64) -> Result<Self> {
        if df == 0 {
            return Err(Error::param("degrees of freedom must be at least 1"));
        }
        if !lambda.is_finite() {
            return Err(Error::Numeric(format!("non-centrality {lambda} is not finite")));
        }
        if lambda < 0.0 {
            return Err(Error::param(format!("non-centrality {lambda} is negative")));
        }
        if lambda > MAX_NONCENTRALITY {
            return Err(Error::param(format!("non-centrality {lambda} exceeds supported maximum {MAX_NONCENTRALITY}")));
        }
        Ok(Self { df, lambda, weights: PoissonWeights::new(lambda / 2.0) })
    }

    /// Reuses an existing weight table; `weights` must come from `λ/2`.
    pub fn with_weights(df: u32, lambda: f64, weights: PoissonWeights) -> Self {
        Self { df, lambda, weights }
    }

    pub fn df(&self) -> u32 {
        self.df
    }

    pub fn noncentrality(&self) -> f64 {
        self.lambda
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= 0.0 {
            return 0.0;
        }
        if x == f64::INFINITY {
            return 1.0;
        }
        let y = 0.5 * x;
        let half_df = 0.5 * self.df as f64;
        let w = &self.weights;
        let pivot = w.mode - w.first;
        let a_pivot = half_df + w.mode as f64;

        let p_pivot = regularized_lower_gamma(a_pivot, y);
        let g_pivot = gamma_kernel(a_pivot, y);
        let mut total = w.masses[pivot] * p_pivot;

        // upward: P(a+1) = P(a) - g(a), g(a+1) = g(a) y / (a+1)
        let (mut p, mut g, mut a) = (p_pivot, g_pivot, a_pivot);
        for &mass in &w.masses[pivot + 1..] {
            p = (p - g).max(0.0);
            g *= y / (a + 1.0);
            a += 1.0;
            if g == 0.0 && a < y {
                g = gamma_kernel(a, y);
            }
            total += mass * p;
        }

        // downward: P(a-1) = P(a) + g(a-1), g(a-1) = g(a) a / y
        let (mut p, mut g, mut a) = (p_pivot, g_pivot, a_pivot);
        for &mass in w.masses[..pivot].iter().rev() {
            g = if g == 0.0 && a - 1.0 > y { gamma_kernel(a - 1.0, y) } else { g * a / y };
            a -= 1.0;
            p = (p + g).min(1.0);
            total += mass * p;
        }

        total.clamp(0.0, 1.0)
    }
}

/// `P(χ²(df, λ) ≤ x)`.
pub fn noncentral_chisq_cdf(x: f64, df: u32, lambda: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Numeric(format!("evaluation point {x} is not finite")));
    }
    Ok(NoncentralChiSquared::new(df, lambda)?.cdf(x))
}
