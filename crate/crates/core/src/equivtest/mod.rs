//! Multi-scale equivalence test between the average time curves of two
//! disjoint voxel sets, plus the margin and error-bound calculators used to
//! pick an admissible tolerance.

mod noncentral;

pub use noncentral::{noncentral_chisq_cdf, NoncentralChiSquared, PoissonWeights, MAX_NONCENTRALITY};

use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicScheme, ScaleStats};
use crate::error::{Error, Result};

/// Scalar equivalence tolerance `δ`, shared by every scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub delta: f64,
    pub n: usize,
}

impl MarginSpec {
    pub fn new(delta: f64, n: usize) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::param(format!("tolerance must be finite and nonnegative, got {delta}")));
        }
        Ok(Self { delta, n })
    }

    /// Non-centrality `n δ²` of every per-scale null distribution.
    pub fn noncentrality(&self) -> f64 {
        self.n as f64 * self.delta * self.delta
    }
}

/// Per-scale p-values of a pair and their union-intersection maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPValue {
    pub per_scale: Vec<f64>,
    pub p: f64,
    pub stats: ScaleStats,
}

/// Precomputed test for one dyadic scheme and margin; cheap to share
/// between threads.
#[derive(Debug, Clone)]
pub struct PairTest {
    scheme: DyadicScheme,
    margin: MarginSpec,
    nulls: Vec<NoncentralChiSquared>,
}

impl PairTest {
    pub fn new(scheme: DyadicScheme, margin: MarginSpec) -> Result<Self> {
        if margin.n != scheme.len() {
            return Err(Error::shape(format!("margin built for n = {}, scheme has n = {}", margin.n, scheme.len())));
        }
        let lambda = margin.noncentrality();
        // validates λ once; every scale shares the weight table
        let first = NoncentralChiSquared::new(1, lambda)?;
        let weights = PoissonWeights::new(lambda / 2.0);
        let nulls = scheme
            .degrees_of_freedom()
            .into_iter()
            .map(|df| NoncentralChiSquared::with_weights(df, first.noncentrality(), weights.clone()))
            .collect();
        Ok(Self { scheme, margin, nulls })
    }

    pub fn scheme(&self) -> &DyadicScheme {
        &self.scheme
    }

    pub fn margin(&self) -> &MarginSpec {
        &self.margin
    }

    fn difference(sum_x: &[f64], size_x: usize, sum_y: &[f64], size_y: usize) -> Vec<f64> {
        let (nx, ny) = (size_x as f64, size_y as f64);
        let rho = (1.0 / nx + 1.0 / ny).sqrt();
        sum_x.iter().zip(sum_y).map(|(&x, &y)| (x / nx - y / ny) / rho).collect()
    }

    fn check(&self, sum_x: &[f64], size_x: usize, sum_y: &[f64], size_y: usize) -> Result<()> {
        if size_x == 0 || size_y == 0 {
            return Err(Error::param("cluster sizes must be positive"));
        }
        let n = self.scheme.len();
        if sum_x.len() != n || sum_y.len() != n {
            return Err(Error::shape(format!(
                "time curves have lengths {} and {}, expected {n}",
                sum_x.len(),
                sum_y.len()
            )));
        }
        Ok(())
    }

    /// Overall p-value `max_K p_K` from the time-curve sums of two clusters.
    ///
    /// Inputs are trusted (engine hot path); use [`PairTest::detail`] for
    /// checked evaluation.
    pub fn p_value(&self, sum_x: &[f64], size_x: usize, sum_y: &[f64], size_y: usize) -> f64 {
        let d = Self::difference(sum_x, size_x, sum_y, size_y);
        let mut stats = vec![0.0; self.scheme.scale_count()];
        self.scheme.scale_stats_into(&d, &mut stats).expect("curve lengths match the scheme");
        stats.iter().zip(&self.nulls).map(|(&s, null)| null.cdf(s)).fold(0.0, f64::max)
    }

    /// Like [`PairTest::p_value`] but gives up as soon as one scale reaches
    /// `cap`, returning `None`; the returned value, when any, is exact.
    pub fn p_value_below(&self, sum_x: &[f64], size_x: usize, sum_y: &[f64], size_y: usize, cap: f64) -> Option<f64> {
        let d = Self::difference(sum_x, size_x, sum_y, size_y);
        let mut stats = vec![0.0; self.scheme.scale_count()];
        self.scheme.scale_stats_into(&d, &mut stats).expect("curve lengths match the scheme");
        let mut p = 0.0f64;
        for (&s, null) in stats.iter().zip(&self.nulls) {
            let pk = null.cdf(s);
            if pk >= cap {
                return None;
            }
            p = p.max(pk);
        }
        Some(p)
    }

    pub fn detail(&self, sum_x: &[f64], size_x: usize, sum_y: &[f64], size_y: usize) -> Result<PairPValue> {
        self.check(sum_x, size_x, sum_y, size_y)?;
        let d = Self::difference(sum_x, size_x, sum_y, size_y);
        let stats = self.scheme.scale_stats(&d)?;
        let per_scale: Vec<f64> = stats.values.iter().zip(&self.nulls).map(|(&s, null)| null.cdf(s)).collect();
        let p = per_scale.iter().copied().fold(0.0, f64::max);
        Ok(PairPValue { per_scale, p, stats })
    }
}

/// Checked one-shot p-value of the equivalence test for two clusters given
/// their time-curve sums and sizes.
pub fn pair_pvalue(
    sum_x: &[f64],
    size_x: usize,
    sum_y: &[f64],
    size_y: usize,
    scheme: &DyadicScheme,
    margin: &MarginSpec,
) -> Result<PairPValue> {
    PairTest::new(scheme.clone(), *margin)?.detail(sum_x, size_x, sum_y, size_y)
}

/// Sufficient equivalence margin `n δ²` guaranteeing the wrong-binding bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginGuidance {
    pub n: usize,
    pub kappa: f64,
    /// `√n`
    pub sqrt_term: f64,
    /// `2 (1 + κ ln 2) log₂(n/2)`
    pub log_term: f64,
    /// Required `n δ²`, the larger of the two terms.
    pub bound: f64,
    /// Smallest admissible tolerance `√(bound / n)`.
    pub delta_min: f64,
}

pub fn min_margin(n: usize, kappa: f64) -> Result<MarginGuidance> {
    if n < 5 {
        return Err(Error::param(format!("margin guidance needs n >= 5, got {n}")));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::param(format!("kappa must be a finite value >= 1, got {kappa}")));
    }
    let nf = n as f64;
    let sqrt_term = nf.sqrt();
    let log_term = 2.0 * (1.0 + kappa * std::f64::consts::LN_2) * (nf / 2.0).log2();
    let bound = sqrt_term.max(log_term);
    Ok(MarginGuidance { n, kappa, sqrt_term, log_term, bound, delta_min: (bound / nf).sqrt() })
}

/// Upper bound `|𝒳|³ (n/2)^{-κ}` on the probability of ever merging two
/// separated clusters before two unseparated ones.
pub fn wrong_binding_bound(grid_size: usize, n: usize, kappa: f64) -> f64 {
    (3.0 * (grid_size as f64).ln() - kappa * (n as f64 / 2.0).ln()).exp()
}
