//! Nested dyadic partitions of the time axis and the per-scale statistics
//! of a difference curve.
//!
//! Level `K` splits `0..n` into `2^K` contiguous blocks with boundaries
//! `⌊k n / 2^K⌋`. The same boundary formula at every level makes the
//! partitions nested: block `k` of level `K-1` is blocks `2k` and `2k+1` of
//! level `K`. The finest level `K₀ = ⌊log₂ n⌋ - 1` always has blocks of at
//! least two indices.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::special::CompensatedSum;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadicScheme {
    n: usize,
    finest: usize,
    /// `levels[K]` holds the `2^K` blocks of level `K`.
    levels: Vec<Vec<Range<usize>>>,
}

/// Per-scale statistics `s_K` with their chi-squared degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleStats {
    pub values: Vec<f64>,
    pub df: Vec<u32>,
}

/// Degrees of freedom of scale `K`: 1 for `K ∈ {0, 1}`, `2^{K-1}` above.
pub fn scale_df(level: usize) -> u32 {
    if level == 0 {
        1
    } else {
        1 << (level - 1)
    }
}

impl DyadicScheme {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::param(format!("at least 4 time points are required for a dyadic scheme, got {n}")));
        }
        let finest = (usize::BITS - 1 - n.leading_zeros()) as usize - 1;
        let levels = (0..=finest)
            .map(|level| {
                let count = 1usize << level;
                (0..count).map(|k| (k * n / count)..((k + 1) * n / count)).collect()
            })
            .collect();
        Ok(Self { n, finest, levels })
    }

    /// Number of retained time points.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Finest level `K₀`.
    pub fn finest_level(&self) -> usize {
        self.finest
    }

    /// Number of scales, `K₀ + 1`.
    pub fn scale_count(&self) -> usize {
        self.finest + 1
    }

    pub fn blocks(&self, level: usize) -> &[Range<usize>] {
        &self.levels[level]
    }

    pub fn degrees_of_freedom(&self) -> Vec<u32> {
        (0..=self.finest).map(scale_df).collect()
    }

    /// Computes `s_K` for a difference curve `d` of length `n`.
    ///
    /// `s_0 = n·mean(d)²`; for `K ≥ 1` each sibling pair of level-`K` blocks
    /// with means `m₁, m₂` and sizes `n₁, n₂` contributes
    /// `(m₁ - m₂)² n₁ n₂ / (n₁ + n₂)`, the squared norm of the part of the
    /// level-`K` projection that the level-`K-1` projection does not explain.
    pub fn scale_stats(&self, d: &[f64]) -> Result<ScaleStats> {
        let mut values = vec![0.0; self.scale_count()];
        self.scale_stats_into(d, &mut values)?;
        Ok(ScaleStats { values, df: self.degrees_of_freedom() })
    }

    /// Allocation-light variant writing `s_K` into `out[K]`.
    pub fn scale_stats_into(&self, d: &[f64], out: &mut [f64]) -> Result<()> {
        if d.len() != self.n {
            return Err(Error::shape(format!("difference curve has {} samples, scheme expects {}", d.len(), self.n)));
        }
        if out.len() != self.scale_count() {
            return Err(Error::shape(format!("output holds {} scales, scheme has {}", out.len(), self.scale_count())));
        }
        let mut sums: Vec<f64> = self.levels[self.finest]
            .iter()
            .map(|block| d[block.clone()].iter().copied().collect::<CompensatedSum>().value())
            .collect();
        for level in (1..=self.finest).rev() {
            let blocks = &self.levels[level];
            let mut stat = CompensatedSum::new();
            let mut parent = Vec::with_capacity(sums.len() / 2);
            for (k, pair) in sums.chunks_exact(2).enumerate() {
                let n1 = blocks[2 * k].len() as f64;
                let n2 = blocks[2 * k + 1].len() as f64;
                let contrast = pair[0] / n1 - pair[1] / n2;
                stat.add(contrast * contrast * (n1 * n2 / (n1 + n2)));
                parent.push(pair[0] + pair[1]);
            }
            out[level] = stat.value();
            sums = parent;
        }
        out[0] = sums[0] * sums[0] / self.n as f64;
        Ok(())
    }
}
