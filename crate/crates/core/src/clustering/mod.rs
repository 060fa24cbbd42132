//! Two-step agglomerative segmentation: merging restricted to grid
//! neighbors, then merging among all clusters, each step stopped by the
//! control function.

mod engine;

pub use engine::{ClusterState, Edge, MergeRecord, Phase};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicScheme;
use crate::equivtest::{MarginSpec, PairTest};
use crate::error::{Error, Result};
use crate::grid::Connectivity;
use crate::labels::LabelMap;
use crate::model::{self, Provenance, RawSequence, StabilizedSequence};

/// Control threshold `c_α(ℓ) = (2α / (ℓ(ℓ-1)))^{1/(K₀+1)}`.
pub fn control(ell: usize, alpha: f64, finest_level: usize) -> Result<f64> {
    if ell < 2 {
        return Err(Error::param(format!("control function needs at least 2 clusters, got {ell}")));
    }
    check_alpha(alpha)?;
    let l = ell as f64;
    let log = ((2.0 * alpha).ln() - l.ln() - (l - 1.0).ln()) / (finest_level as f64 + 1.0);
    Ok(log.exp())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub alpha: f64,
    pub delta: f64,
    /// Stabilization exponent applied to raw input.
    pub exponent: f64,
    /// Leading baseline images to remove; 0 keeps every image.
    pub baseline_count: usize,
    /// `None` picks 4-connectivity in 2D and 6 in 3D.
    pub connectivity: Option<Connectivity>,
    pub skip_global: bool,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self { alpha: 0.001, delta: 1.0, exponent: 0.45, baseline_count: 0, connectivity: None, skip_global: false }
    }
}

impl SegmentParams {
    pub fn with_delta(delta: f64) -> Self {
        Self { delta, ..Self::default() }
    }
}

/// Final partition with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segmentation {
    /// Labels `0..ℓ*` in decreasing cluster-size order.
    pub labels: LabelMap,
    pub local_clusters: usize,
    pub final_clusters: usize,
    pub sizes: Vec<usize>,
    /// Average time curve per label, `means[label * n + j]`.
    pub means: Vec<f64>,
    /// Stable ID (minimum voxel index) per label.
    pub cluster_ids: Vec<u32>,
    pub times: Vec<f64>,
    pub trace: Vec<MergeRecord>,
    pub params: SegmentParams,
    pub provenance: Provenance,
    pub connectivity: Connectivity,
}

impl Segmentation {
    pub fn mean_curve(&self, label: usize) -> &[f64] {
        let n = self.times.len();
        &self.means[label * n..(label + 1) * n]
    }
}

/// Stabilizes, optionally removes the baseline, then segments.
pub fn segment(raw: &RawSequence, params: &SegmentParams) -> Result<Segmentation> {
    let mut seq = model::stabilize(raw, params.exponent)?;
    if params.baseline_count > 0 {
        seq = model::remove_baseline(&seq, params.baseline_count)?;
    }
    segment_stabilized(&seq, params)
}

/// Segments a sequence already on the unit-noise scale. The exponent and
/// baseline fields of `params` are not applied here.
pub fn segment_stabilized(seq: &StabilizedSequence, params: &SegmentParams) -> Result<Segmentation> {
    check_alpha(params.alpha)?;
    let connectivity = params.connectivity.unwrap_or_else(|| Connectivity::default_for(seq.grid().ndims()));
    let scheme = DyadicScheme::new(seq.time_count())?;
    let margin = MarginSpec::new(params.delta, seq.time_count())?;
    let test = PairTest::new(scheme, margin)?;

    let mut state = ClusterState::init_local(seq, connectivity, test, params.alpha)?;
    state.run_phase();
    let local_clusters = state.cluster_count();
    if !params.skip_global && state.cluster_count() > 1 {
        state.start_global();
        state.run_phase();
    }
    Ok(finish(seq, &state, local_clusters, params.clone(), connectivity))
}

fn finish(
    seq: &StabilizedSequence,
    state: &ClusterState,
    local_clusters: usize,
    params: SegmentParams,
    connectivity: Connectivity,
) -> Segmentation {
    let n = seq.time_count();
    let mut ids: Vec<u32> = state.cluster_ids().collect();
    ids.sort_by(|&a, &b| state.cluster_size(b).cmp(&state.cluster_size(a)).then(a.cmp(&b)));
    let mut labels = vec![0u32; seq.voxel_count()];
    let mut means = Vec::with_capacity(ids.len() * n);
    let mut sizes = Vec::with_capacity(ids.len());
    for (label, &id) in ids.iter().enumerate() {
        for &v in state.cluster_members(id) {
            labels[v as usize] = label as u32;
        }
        let size = state.cluster_size(id);
        sizes.push(size);
        means.extend(state.cluster_sum(id).iter().map(|s| s / size as f64));
    }
    Segmentation {
        labels: LabelMap::new(seq.grid().clone(), labels).expect("labels are dense"),
        local_clusters,
        final_clusters: ids.len(),
        sizes,
        means,
        cluster_ids: ids,
        times: seq.times().to_vec(),
        trace: state.trace().to_vec(),
        params,
        provenance: seq.provenance(),
        connectivity,
    }
}

/// Outcome of the slope-heuristic tolerance selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSelection {
    /// `(δ, ℓ*)` for every grid point.
    pub table: Vec<(f64, usize)>,
    /// First grid point where the relative slope drops below the threshold.
    pub delta0: Option<f64>,
    pub delta_star: f64,
    /// Set when no slope fell below the threshold; `delta_star` is then the
    /// largest grid value.
    pub warning: bool,
}

/// Applies the slope rule to a `(δ, ℓ*)` table ordered by increasing `δ`.
pub fn select_delta(table: &[(f64, usize)], slope_threshold: f64) -> Result<DeltaSelection> {
    if table.len() < 3 {
        return Err(Error::param(format!("the tolerance grid needs at least 3 points, got {}", table.len())));
    }
    if !(slope_threshold > 0.0 && slope_threshold < 1.0) {
        return Err(Error::param(format!("slope threshold must lie in (0, 1), got {slope_threshold}")));
    }
    if table.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::param("tolerance grid must be strictly increasing"));
    }
    let delta0 = table.windows(2).find_map(|w| {
        let (lo, hi) = (w[0].1 as f64, w[1].1 as f64);
        ((lo - hi) / lo < slope_threshold).then_some(w[0].0)
    });
    let (delta_star, warning) = match delta0 {
        Some(d) => (2.0 * d, false),
        None => (table[table.len() - 1].0, true),
    };
    Ok(DeltaSelection { table: table.to_vec(), delta0, delta_star, warning })
}

/// Segments once per grid value and picks `δ* = 2 δ₀` by the slope rule.
pub fn auto_delta(
    seq: &StabilizedSequence,
    params: &SegmentParams,
    delta_grid: &[f64],
    slope_threshold: f64,
) -> Result<DeltaSelection> {
    if delta_grid.len() < 3 {
        return Err(Error::param(format!("the tolerance grid needs at least 3 points, got {}", delta_grid.len())));
    }
    let table = delta_grid
        .par_iter()
        .map(|&delta| {
            let p = SegmentParams { delta, ..params.clone() };
            segment_stabilized(seq, &p).map(|s| (delta, s.final_clusters))
        })
        .collect::<Result<Vec<_>>>()?;
    select_delta(&table, slope_threshold)
}
