//! Observation model: power-law variance stabilization, baseline removal and
//! normalized residuals.
//!
//! Sequences are stored voxel-major: the time curve of voxel `v` occupies
//! `data[v * n..(v + 1) * n]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::labels::LabelMap;
use crate::special::CompensatedSum;

/// Observed nonnegative intensities before any transform.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    grid: Grid,
    times: Vec<f64>,
    data: Vec<f64>,
}

/// Intensities on the unit-noise scale, possibly with the baseline removed.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedSequence {
    grid: Grid,
    times: Vec<f64>,
    data: Vec<f64>,
    /// Exponent of the power transform, `None` for data supplied directly
    /// on the stabilized scale (synthetic sequences).
    exponent: Option<f64>,
    baseline_count: usize,
    enhanced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub exponent: Option<f64>,
    pub baseline_count: usize,
    pub enhanced: bool,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 4 {
        return Err(Error::Data(format!("at least 4 acquisition times are required, got {}", times.len())));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Data("acquisition times must be finite".into()));
    }
    if let Some(j) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Data(format!("acquisition times are not strictly increasing at index {}", j + 1)));
    }
    Ok(())
}

fn check_len(grid: &Grid, n: usize, data: &[f64]) -> Result<()> {
    let expected = grid.voxel_count() * n;
    if data.len() != expected {
        return Err(Error::shape(format!("expected {expected} samples, got {}", data.len())));
    }
    Ok(())
}

impl RawSequence {
    pub fn new(grid: Grid, times: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        check_times(&times)?;
        check_len(&grid, times.len(), &data)?;
        if let Some(i) = data.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            let n = times.len();
            return Err(Error::Data(format!(
                "intensity {} at voxel {}, time {} is not a finite nonnegative value",
                data[i],
                i / n,
                i % n
            )));
        }
        Ok(Self { grid, times, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn time_count(&self) -> usize {
        self.times.len()
    }

    pub fn curve(&self, voxel: usize) -> &[f64] {
        let n = self.times.len();
        &self.data[voxel * n..(voxel + 1) * n]
    }
}

impl StabilizedSequence {
    /// Wraps values that already follow the unit-noise model.
    pub fn from_stabilized(grid: Grid, times: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        check_times(&times)?;
        check_len(&grid, times.len(), &data)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("stabilized intensities must be finite".into()));
        }
        Ok(Self { grid, times, data, exponent: None, baseline_count: 0, enhanced: false })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn time_count(&self) -> usize {
        self.times.len()
    }

    pub fn voxel_count(&self) -> usize {
        self.grid.voxel_count()
    }

    pub fn curve(&self, voxel: usize) -> &[f64] {
        let n = self.times.len();
        &self.data[voxel * n..(voxel + 1) * n]
    }

    pub fn exponent(&self) -> Option<f64> {
        self.exponent
    }

    pub fn baseline_count(&self) -> usize {
        self.baseline_count
    }

    pub fn is_enhanced(&self) -> bool {
        self.enhanced
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { exponent: self.exponent, baseline_count: self.baseline_count, enhanced: self.enhanced }
    }
}

pub fn check_exponent(a: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::param(format!("stabilization exponent must lie in (0, 1), got {a}")));
    }
    Ok(())
}

/// `I = Φ^a / a` for every sample.
pub fn stabilize(raw: &RawSequence, a: f64) -> Result<StabilizedSequence> {
    check_exponent(a)?;
    let data = raw.data.par_iter().map(|&phi| phi.powf(a) / a).collect();
    Ok(StabilizedSequence {
        grid: raw.grid.clone(),
        times: raw.times.clone(),
        data,
        exponent: Some(a),
        baseline_count: 0,
        enhanced: false,
    })
}

/// Subtracts the mean of the first `baseline_count` samples of every curve,
/// rescales to unit variance and drops the baseline samples.
pub fn remove_baseline(seq: &StabilizedSequence, baseline_count: usize) -> Result<StabilizedSequence> {
    if seq.enhanced {
        return Err(Error::param("baseline already removed from this sequence"));
    }
    let n = seq.time_count();
    if baseline_count < 1 || baseline_count + 2 > n {
        return Err(Error::param(format!(
            "baseline image count must lie in 1..={}, got {baseline_count}",
            n.saturating_sub(2)
        )));
    }
    let scale = (1.0 + 1.0 / baseline_count as f64).sqrt();
    let data = seq
        .data
        .par_chunks(n)
        .flat_map_iter(|curve| {
            let base =
                curve[..baseline_count].iter().copied().collect::<CompensatedSum>().value() / baseline_count as f64;
            curve[baseline_count..].iter().map(move |&v| (v - base) / scale)
        })
        .collect();
    Ok(StabilizedSequence {
        grid: seq.grid.clone(),
        times: seq.times[baseline_count..].to_vec(),
        data,
        exponent: seq.exponent,
        baseline_count,
        enhanced: true,
    })
}

/// Normalized within-cluster residuals, one curve per voxel of every
/// non-singleton cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    n: usize,
    voxels: Vec<usize>,
    values: Vec<f64>,
    skipped: Vec<u32>,
}

impl ResidualField {
    pub fn time_count(&self) -> usize {
        self.n
    }

    /// Voxels carrying residuals, increasing.
    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    /// Residual curves in the order of [`ResidualField::voxels`].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Singleton clusters, for which residuals are undefined.
    pub fn skipped_clusters(&self) -> &[u32] {
        &self.skipped
    }
}

/// Cluster means per time, `means[c * n + j]`.
pub fn cluster_means(seq: &StabilizedSequence, partition: &LabelMap) -> Result<Vec<f64>> {
    if partition.grid() != seq.grid() {
        return Err(Error::shape(format!(
            "partition grid {:?} does not match sequence grid {:?}",
            partition.grid().dims(),
            seq.grid().dims()
        )));
    }
    let n = seq.time_count();
    let members = partition.members();
    let means = members
        .par_iter()
        .flat_map_iter(|voxels| {
            let mut acc = vec![CompensatedSum::new(); n];
            for &v in voxels {
                for (a, &x) in acc.iter_mut().zip(seq.curve(v)) {
                    a.add(x);
                }
            }
            let size = voxels.len() as f64;
            acc.into_iter().map(move |a| a.value() / size)
        })
        .collect();
    Ok(means)
}

pub fn normalized_residuals(seq: &StabilizedSequence, partition: &LabelMap) -> Result<ResidualField> {
    let n = seq.time_count();
    let means = cluster_means(seq, partition)?;
    let sizes = partition.sizes();
    let skipped = sizes.iter().enumerate().filter(|(_, &s)| s < 2).map(|(c, _)| c as u32).collect();
    let voxels: Vec<usize> = (0..seq.voxel_count()).filter(|&v| sizes[partition.labels()[v] as usize] >= 2).collect();
    let values = voxels
        .par_iter()
        .flat_map_iter(|&v| {
            let c = partition.labels()[v] as usize;
            let scale = (1.0 - 1.0 / sizes[c] as f64).sqrt();
            let mean = &means[c * n..(c + 1) * n];
            seq.curve(v).iter().zip(mean).map(move |(&x, &m)| (x - m) / scale)
        })
        .collect();
    Ok(ResidualField { n, voxels, values, skipped })
}
