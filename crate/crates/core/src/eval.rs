//! Agreement between two partitions of the same grid: Fowlkes–Mallows index,
//! a cluster-size weighted variant, and a voxel error map.
//!
//! Pair counts come from the contingency table, never from enumerating voxel
//! pairs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use crate::labels::LabelMap;

use crate::error::Result;
use crate::special::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmScore {
    pub value: f64,
    /// Set when the denominator vanished and `value` was reported as 0.
    pub degenerate: bool,
}

/// Sparse contingency table `n_ij = |P_i ∩ Q_j|`.
struct Contingency {
    cells: BTreeMap<(u32, u32), u64>,
    rows: Vec<u64>,
    cols: Vec<u64>,
}

impl Contingency {
    fn new(p: &LabelMap, q: &LabelMap) -> Result<Self> {
        p.check_same_grid(q)?;
        let mut cells = BTreeMap::new();
        for (&a, &b) in p.labels().iter().zip(q.labels()) {
            *cells.entry((a, b)).or_insert(0u64) += 1;
        }
        let rows = p.sizes().into_iter().map(|s| s as u64).collect();
        let cols = q.sizes().into_iter().map(|s| s as u64).collect();
        Ok(Self { cells, rows, cols })
    }
}

fn pairs(k: u64) -> u128 {
    let k = k as u128;
    k * k.saturating_sub(1) / 2
}

fn combine(n11: f64, same_p: f64, same_q: f64) -> FmScore {
    let denom = (same_p * same_q).sqrt();
    if denom == 0.0 {
        FmScore { value: 0.0, degenerate: true }
    } else {
        FmScore { value: n11 / denom, degenerate: false }
    }
}

/// Pair counts `(N11, N10, N01)`.
pub fn pair_counts(p: &LabelMap, q: &LabelMap) -> Result<(u128, u128, u128)> {
    let t = Contingency::new(p, q)?;
    let n11: u128 = t.cells.values().map(|&c| pairs(c)).sum();
    let same_p: u128 = t.rows.iter().map(|&c| pairs(c)).sum();
    let same_q: u128 = t.cols.iter().map(|&c| pairs(c)).sum();
    Ok((n11, same_p - n11, same_q - n11))
}

pub fn fm_index(p: &LabelMap, q: &LabelMap) -> Result<FmScore> {
    let (n11, n10, n01) = pair_counts(p, q)?;
    Ok(combine(n11 as f64, (n11 + n10) as f64, (n11 + n01) as f64))
}

/// Weighted pair counts `(N11, N11 + N10, N11 + N01)` where a pair counts
/// `w₁ w₂` with `w = |𝒳| / |C|` taken from the voxel's cluster in `p`.
pub fn weighted_pair_counts(p: &LabelMap, q: &LabelMap) -> Result<(f64, f64, f64)> {
    let t = Contingency::new(p, q)?;
    let total = p.len() as f64;
    let weight = |row: u32| total / t.rows[row as usize] as f64;

    let mut n11 = CompensatedSum::new();
    for (&(i, _), &c) in &t.cells {
        let w = weight(i);
        n11.add(pairs(c) as f64 * w * w);
    }
    let mut same_p = CompensatedSum::new();
    for (i, &c) in t.rows.iter().enumerate() {
        let w = weight(i as u32);
        same_p.add(pairs(c) as f64 * w * w);
    }
    // within each Q cluster: Σ_{x<y} w_x w_y = ((Σ w)² - Σ w²) / 2
    let ncols = t.cols.len();
    let mut lin = vec![CompensatedSum::new(); ncols];
    let mut sq = vec![CompensatedSum::new(); ncols];
    for (&(i, j), &c) in &t.cells {
        let w = weight(i);
        lin[j as usize].add(c as f64 * w);
        sq[j as usize].add(c as f64 * w * w);
    }
    let mut same_q = CompensatedSum::new();
    for (l, s) in lin.iter().zip(&sq) {
        let l = l.value();
        same_q.add(0.5 * (l * l - s.value()));
    }
    Ok((n11.value(), same_p.value(), same_q.value()))
}

/// Weighted Fowlkes–Mallows index; weights come from the first partition,
/// so the index is not symmetric in general.
pub fn weighted_fm(p: &LabelMap, q: &LabelMap) -> Result<FmScore> {
    let (n11, same_p, same_q) = weighted_pair_counts(p, q)?;
    Ok(combine(n11, same_p, same_q))
}

/// For every cluster of `from`, the cluster of `to` covering most of it;
/// ties go to the smallest label.
fn best_matches(t: &Contingency, transpose: bool, count: usize) -> Vec<u32> {
    let mut best: Vec<(u64, u32)> = vec![(0, u32::MAX); count];
    for (&(i, j), &c) in &t.cells {
        let (from, to) = if transpose { (j, i) } else { (i, j) };
        let slot = &mut best[from as usize];
        if c > slot.0 || (c == slot.0 && to < slot.1) {
            *slot = (c, to);
        }
    }
    best.into_iter().map(|(_, to)| to).collect()
}

/// Marks voxels of `P_i` outside its best match `Q_{j_i}` and voxels of
/// `Q_j` outside its best match `P_{i_j}`.
pub fn error_map(p: &LabelMap, q: &LabelMap) -> Result<Vec<bool>> {
    let t = Contingency::new(p, q)?;
    let p_to_q = best_matches(&t, false, t.rows.len());
    let q_to_p = best_matches(&t, true, t.cols.len());
    Ok(p.labels().iter().zip(q.labels()).map(|(&a, &b)| p_to_q[a as usize] != b || q_to_p[b as usize] != a).collect())
}
