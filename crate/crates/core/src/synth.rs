//! Synthetic sequences with known ground truth: piecewise-constant time
//! curves on a label map plus independent unit Gaussian noise.
//!
//! Noise comes from ChaCha8 with one stream per voxel, so a voxel's samples
//! depend only on `(seed, voxel, time)` and generation can run in any order
//! or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::DyadicScheme;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::labels::LabelMap;
use crate::model::{check_exponent, RawSequence, StabilizedSequence};

/// Smooth enhancement curve on the stabilized scale:
/// `baseline + amplitude (1 - e^{-t/rise}) e^{-t/decay}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancementCurve {
    pub baseline: f64,
    pub amplitude: f64,
    /// Uptake time constant in seconds.
    pub rise: f64,
    /// Washout time constant in seconds.
    pub decay: f64,
}

impl EnhancementCurve {
    pub const fn new(baseline: f64, amplitude: f64, rise: f64, decay: f64) -> Self {
        Self { baseline, amplitude, rise, decay }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.baseline + self.amplitude * (1.0 - (-t / self.rise).exp()) * (-t / self.decay).exp()
    }

    pub fn sample(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.value(t)).collect()
    }
}

/// Everything needed to regenerate a synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: String,
    pub dims: Vec<usize>,
    pub times: Vec<f64>,
    pub curves: Vec<EnhancementCurve>,
    /// Multiplier applied to every true curve before noise.
    pub snr: f64,
    pub seed: u64,
    /// Noise standard deviation; 1 for every generated sequence, 0 only for
    /// noiseless test fixtures.
    pub noise_sd: f64,
    /// Human-readable geometry description.
    pub geometry: String,
}

impl PhantomSpec {
    /// True (noiseless, SNR-scaled) curve of every label, `curves[l * n + j]`.
    pub fn true_curves(&self) -> Vec<f64> {
        self.curves.iter().flat_map(|c| c.sample(&self.times)).map(|v| v * self.snr).collect()
    }
}

/// Uniform acquisition times `0, dt, 2 dt, ...`.
pub fn uniform_times(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|j| j as f64 * dt).collect()
}

/// Standard normal draws for one voxel.
pub fn voxel_noise(seed: u64, voxel: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(voxel as u64);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Builds the observed sequence for a label map and per-label curves.
pub fn render(labels: &LabelMap, spec: &PhantomSpec) -> Result<StabilizedSequence> {
    if spec.curves.len() != labels.cluster_count() {
        return Err(Error::param(format!("{} curves for {} labels", spec.curves.len(), labels.cluster_count())));
    }
    if labels.grid().dims() != spec.dims.as_slice() {
        return Err(Error::shape("label map does not match the phantom grid"));
    }
    let n = spec.times.len();
    let truth = spec.true_curves();
    let data: Vec<f64> = labels
        .labels()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(v, &l)| {
            let base = &truth[l as usize * n..(l as usize + 1) * n];
            let noise = if spec.noise_sd > 0.0 { voxel_noise(spec.seed, v, n) } else { vec![0.0; n] };
            base.iter().zip(noise).map(|(&b, z)| b + spec.noise_sd * z).collect::<Vec<_>>()
        })
        .collect();
    StabilizedSequence::from_stabilized(labels.grid().clone(), spec.times.clone(), data)
}

/// Raw intensities under the power-law noise model: with
/// `φ = (a i)^{1/a}`, `Φ ~ N(φ, φ^{2-2a})`, so that `Φ^a / a` has unit
/// noise around the true curve `i`. Curves must be positive.
pub fn render_raw(labels: &LabelMap, spec: &PhantomSpec, a: f64) -> Result<RawSequence> {
    check_exponent(a)?;
    if spec.curves.len() != labels.cluster_count() {
        return Err(Error::param("one curve per label is required"));
    }
    let n = spec.times.len();
    let truth = spec.true_curves();
    if truth.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::param("raw rendering needs strictly positive true curves"));
    }
    let data: Vec<f64> = labels
        .labels()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(v, &l)| {
            let base = &truth[l as usize * n..(l as usize + 1) * n];
            let noise = voxel_noise(spec.seed, v, n);
            base.iter()
                .zip(noise)
                .map(|(&i, z)| {
                    let phi = (a * i).powf(1.0 / a);
                    (phi + phi.powf(1.0 - a) * z).max(0.0)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    RawSequence::new(labels.grid().clone(), spec.times.clone(), data)
}

/// Chessboard options; the defaults give the 55×55, 100-image layout with
/// 11×11 squares colored `(row + column) mod 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChessboardConfig {
    pub side: usize,
    pub square: usize,
    pub n: usize,
    pub dt: f64,
    pub curves: Vec<EnhancementCurve>,
    pub snr: f64,
    pub seed: u64,
    pub noise_sd: f64,
}

pub const CHESSBOARD_CURVES: [EnhancementCurve; 3] = [
    EnhancementCurve::new(10.0, 12.0, 15.0, 200.0),
    EnhancementCurve::new(10.0, 12.0, 60.0, 600.0),
    EnhancementCurve::new(10.0, 6.0, 15.0, 200.0),
];

impl Default for ChessboardConfig {
    fn default() -> Self {
        Self {
            side: 55,
            square: 11,
            n: 100,
            dt: 3.0,
            curves: CHESSBOARD_CURVES.to_vec(),
            snr: 1.0,
            seed: 0,
            noise_sd: 1.0,
        }
    }
}

pub fn chessboard(config: &ChessboardConfig) -> Result<(StabilizedSequence, LabelMap, PhantomSpec)> {
    if config.curves.len() < 3 {
        return Err(Error::param(format!("the chessboard needs 3 curves, got {}", config.curves.len())));
    }
    for i in 0..3 {
        for j in i + 1..3 {
            if config.curves[i] == config.curves[j] {
                return Err(Error::param("chessboard curves must be pairwise distinct"));
            }
        }
    }
    if config.square == 0 || config.side == 0 {
        return Err(Error::param("chessboard side and square size must be positive"));
    }
    let grid = Grid::new_2d(config.side, config.side)?;
    let labels: Vec<u32> = (0..grid.voxel_count())
        .map(|v| {
            let [x, y, _] = grid.coords(v);
            ((x / config.square + y / config.square) % 3) as u32
        })
        .collect();
    let labels = LabelMap::new(grid, labels)?;
    let spec = PhantomSpec {
        kind: "chessboard".into(),
        dims: vec![config.side, config.side],
        times: uniform_times(config.n, config.dt),
        curves: config.curves[..3].to_vec(),
        snr: config.snr,
        seed: config.seed,
        noise_sd: config.noise_sd,
        geometry: format!(
            "{side}x{side} grid of {sq}x{sq} squares, label = (floor(x/{sq}) + floor(y/{sq})) mod 3",
            side = config.side,
            sq = config.square
        ),
    };
    let seq = render(&labels, &spec)?;
    Ok((seq, labels, spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom11Config {
    pub n: usize,
    pub dt: f64,
    pub snr: f64,
    pub seed: u64,
    pub noise_sd: f64,
}

impl Default for Phantom11Config {
    fn default() -> Self {
        Self { n: 120, dt: 2.5, snr: 1.0, seed: 0, noise_sd: 1.0 }
    }
}

pub const PHANTOM11_SIDE: usize = 112;

pub const PHANTOM11_CURVES: [EnhancementCurve; 11] = [
    // background
    EnhancementCurve::new(5.0, 0.0, 30.0, 1000.0),
    // body
    EnhancementCurve::new(10.0, 4.0, 80.0, 900.0),
    // organ A
    EnhancementCurve::new(10.0, 10.0, 25.0, 400.0),
    // organ B
    EnhancementCurve::new(12.0, 8.0, 50.0, 2000.0),
    // ring around the lesion
    EnhancementCurve::new(12.0, 16.0, 12.0, 150.0),
    // lesion core
    EnhancementCurve::new(12.0, 12.0, 90.0, 3000.0),
    // vessel
    EnhancementCurve::new(10.0, 24.0, 5.0, 60.0),
    // paired blobs
    EnhancementCurve::new(8.0, 14.0, 40.0, 250.0),
    // small disk inside organ A
    EnhancementCurve::new(10.0, 18.0, 10.0, 1500.0),
    // bar
    EnhancementCurve::new(18.0, 6.0, 30.0, 300.0),
    // corner L
    EnhancementCurve::new(4.0, 12.0, 8.0, 100.0),
];

pub const PHANTOM11_GEOMETRY: &str = "112x112; painted in label order: \
0 background; 1 body ellipse c=(56,60) r=(48,40); 2 organ ellipse c=(40,55) r=(16,22); \
3 organ ellipse c=(78,52) r=(15,19); 4 ring disk c=(78,56) r<=8; 5 lesion disk c=(78,56) r<=4.5; \
6 vessel x in [55,57], y in [22,84]; 7 two disks r<=6 at (28,86) and (88,86); \
8 disk c=(38,44) r<=3.2; 9 bar x in [45,67], y in [88,95]; \
10 corner L x in [2,14] y in [2,6] plus x in [2,6] y in [2,20]";

fn inside_ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

/// Ground-truth layout of the 11-region phantom.
pub fn phantom11_labels() -> LabelMap {
    let side = PHANTOM11_SIDE;
    let grid = Grid::new_2d(side, side).expect("valid grid");
    let labels: Vec<u32> = (0..side * side)
        .map(|v| {
            let (xi, yi) = (v % side, v / side);
            let (x, y) = (xi as f64, yi as f64);
            let mut l = 0;
            if inside_ellipse(x, y, 56.0, 60.0, 48.0, 40.0) {
                l = 1;
            }
            if inside_ellipse(x, y, 40.0, 55.0, 16.0, 22.0) {
                l = 2;
            }
            if inside_ellipse(x, y, 78.0, 52.0, 15.0, 19.0) {
                l = 3;
            }
            if inside_ellipse(x, y, 78.0, 56.0, 8.0, 8.0) {
                l = 4;
            }
            if inside_ellipse(x, y, 78.0, 56.0, 4.5, 4.5) {
                l = 5;
            }
            if (55..=57).contains(&xi) && (22..=84).contains(&yi) {
                l = 6;
            }
            if inside_ellipse(x, y, 28.0, 86.0, 6.0, 6.0) || inside_ellipse(x, y, 88.0, 86.0, 6.0, 6.0) {
                l = 7;
            }
            if inside_ellipse(x, y, 38.0, 44.0, 3.2, 3.2) {
                l = 8;
            }
            if (45..=67).contains(&xi) && (88..=95).contains(&yi) {
                l = 9;
            }
            if ((2..=14).contains(&xi) && (2..=6).contains(&yi)) || ((2..=6).contains(&xi) && (2..=20).contains(&yi)) {
                l = 10;
            }
            l
        })
        .collect();
    LabelMap::new(grid, labels).expect("every phantom label is painted")
}

pub fn phantom11(config: &Phantom11Config) -> Result<(StabilizedSequence, LabelMap, PhantomSpec)> {
    let labels = phantom11_labels();
    let spec = PhantomSpec {
        kind: "phantom11".into(),
        dims: vec![PHANTOM11_SIDE, PHANTOM11_SIDE],
        times: uniform_times(config.n, config.dt),
        curves: PHANTOM11_CURVES.to_vec(),
        snr: config.snr,
        seed: config.seed,
        noise_sd: config.noise_sd,
        geometry: PHANTOM11_GEOMETRY.into(),
    };
    let seq = render(&labels, &spec)?;
    Ok((seq, labels, spec))
}

/// Noiseless multi-scale separation between two regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSeparation {
    pub label_a: u32,
    pub label_b: u32,
    /// `‖d̄_K‖²` per scale for the rescaled mean difference.
    pub per_scale: Vec<f64>,
    pub max: f64,
}

/// Separation of every pair of regions, using the region sizes of `labels`
/// for the rescaling. Pass unit sizes (`voxel_level = true`) to get the
/// separation between two single voxels of the regions.
pub fn separation_report(
    spec: &PhantomSpec,
    labels: &LabelMap,
    scheme: &DyadicScheme,
    voxel_level: bool,
) -> Result<Vec<PairSeparation>> {
    let n = spec.times.len();
    if scheme.len() != n {
        return Err(Error::shape("scheme length differs from the phantom's time count"));
    }
    let truth = spec.true_curves();
    let sizes = labels.sizes();
    let k = spec.curves.len();
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            let (sa, sb) = if voxel_level { (1.0, 1.0) } else { (sizes[a] as f64, sizes[b] as f64) };
            let rho = (1.0 / sa + 1.0 / sb).sqrt();
            let d: Vec<f64> = (0..n).map(|j| (truth[a * n + j] - truth[b * n + j]) / rho).collect();
            let stats = scheme.scale_stats(&d)?;
            let max = stats.values.iter().copied().fold(0.0, f64::max);
            out.push(PairSeparation { label_a: a as u32, label_b: b as u32, per_scale: stats.values, max });
        }
    }
    Ok(out)
}

/// Smallest pairwise separation.
pub fn min_separation(report: &[PairSeparation]) -> f64 {
    report.iter().map(|s| s.max).fold(f64::INFINITY, f64::min)
}
