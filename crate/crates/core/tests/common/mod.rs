//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use eqseg_core::clustering::control;
use eqseg_core::{
    Connectivity, DyadicScheme, Grid, MarginSpec, MergeRecord, PairTest, Phase, SegmentParams, StabilizedSequence,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random piecewise-constant sequence: a few Voronoi regions with shifted
/// sinusoidal curves plus unit noise. Separation strengths vary by seed so
/// that both phases see merges and refusals.
pub fn random_piecewise(width: usize, height: usize, n: usize, seed: u64) -> StabilizedSequence {
    let mut r = rng(seed);
    let grid = Grid::new_2d(width, height).unwrap();
    let k = r.random_range(2..=4);
    let centers: Vec<(f64, f64)> =
        (0..k).map(|_| (r.random_range(0.0..width as f64), r.random_range(0.0..height as f64))).collect();
    let curves: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let level = r.random_range(0.0..2.0);
            let bump = r.random_range(0.0..2.0);
            (0..n).map(|j| level + bump * (j as f64 / n as f64 * 3.0).sin()).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(grid.voxel_count() * n);
    for v in 0..grid.voxel_count() {
        let [x, y, _] = grid.coords(v);
        let label = (0..k)
            .min_by(|&a, &b| {
                let da = (x as f64 - centers[a].0).powi(2) + (y as f64 - centers[a].1).powi(2);
                let db = (x as f64 - centers[b].0).powi(2) + (y as f64 - centers[b].1).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        let noise = normals(&mut r, n);
        data.extend(curves[label].iter().zip(noise).map(|(c, z)| c + z));
    }
    StabilizedSequence::from_stabilized(grid, (0..n).map(|j| j as f64).collect(), data).unwrap()
}

pub struct NaiveResult {
    pub trace: Vec<MergeRecord>,
    /// Cluster ID (minimum member index) of every voxel.
    pub voxel_ids: Vec<u32>,
    pub local_clusters: usize,
}

struct NaiveCluster {
    members: Vec<u32>,
    sum: Vec<f64>,
}

/// Reference agglomeration: every iteration rescans all stored pairs for the
/// lexicographic minimum of `(p̄, id_a, id_b)`; all pairs are kept, with no
/// priority queue and no pruning.
pub fn naive_segment(seq: &StabilizedSequence, params: &SegmentParams) -> NaiveResult {
    let n = seq.time_count();
    let scheme = DyadicScheme::new(n).unwrap();
    let k0 = scheme.finest_level();
    let test = PairTest::new(scheme, MarginSpec::new(params.delta, n).unwrap()).unwrap();
    let connectivity = params.connectivity.unwrap_or(Connectivity::default_for(seq.grid().ndims()));

    let mut clusters: BTreeMap<u32, NaiveCluster> = (0..seq.voxel_count())
        .map(|v| (v as u32, NaiveCluster { members: vec![v as u32], sum: seq.curve(v).to_vec() }))
        .collect();
    let p_of = |clusters: &BTreeMap<u32, NaiveCluster>, a: u32, b: u32| {
        let (x, y) = (&clusters[&a], &clusters[&b]);
        test.p_value(&x.sum, x.members.len(), &y.sum, y.members.len())
    };
    // (lo, hi) -> (p_raw, p_bar)
    let mut edges: BTreeMap<(u32, u32), (f64, f64)> = BTreeMap::new();
    for (a, b) in seq.grid().neighbor_pairs(connectivity).unwrap() {
        let p = p_of(&clusters, a, b);
        edges.insert((a, b), (p, p));
    }

    let mut trace = Vec::new();
    let mut local_clusters = 0;
    for phase in [Phase::Local, Phase::Global] {
        if phase == Phase::Global {
            local_clusters = clusters.len();
            if params.skip_global || clusters.len() < 2 {
                break;
            }
            let ids: Vec<u32> = clusters.keys().copied().collect();
            let mut all = BTreeMap::new();
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    let e = edges.get(&(a, b)).copied().unwrap_or_else(|| {
                        let p = p_of(&clusters, a, b);
                        (p, p)
                    });
                    all.insert((a, b), e);
                }
            }
            edges = all;
        }
        loop {
            if clusters.len() < 2 {
                break;
            }
            let ell = clusters.len();
            let threshold = control(ell, params.alpha, k0).unwrap();
            let Some((&(a, b), &(p_raw, p_bar))) =
                edges.iter().min_by(|x, y| x.1 .1.total_cmp(&y.1 .1).then(x.0.cmp(y.0)))
            else {
                break;
            };
            if !(p_bar < threshold) {
                break;
            }
            trace.push(MergeRecord {
                iteration: trace.len(),
                phase,
                id_a: a,
                id_b: b,
                new_id: a,
                p_raw,
                p_corrected: p_bar,
                control: threshold,
                ell,
            });
            // detach both clusters' pairs
            let mut with_a = BTreeMap::new();
            let mut with_b = BTreeMap::new();
            let keys: Vec<(u32, u32)> = edges.keys().copied().collect();
            for key in keys {
                let (lo, hi) = key;
                if lo == a || hi == a || lo == b || hi == b {
                    let e = edges.remove(&key).unwrap();
                    let other = if lo == a || lo == b { hi } else { lo };
                    if other == a || other == b {
                        continue;
                    }
                    if lo == a || hi == a {
                        with_a.insert(other, e.1);
                    } else {
                        with_b.insert(other, e.1);
                    }
                }
            }
            let gone = clusters.remove(&b).unwrap();
            let keep = clusters.get_mut(&a).unwrap();
            for (x, y) in keep.sum.iter_mut().zip(&gone.sum) {
                *x += *y;
            }
            keep.members.extend(gone.members);
            let others: std::collections::BTreeSet<u32> = with_a.keys().chain(with_b.keys()).copied().collect();
            for c in others {
                let p = p_of(&clusters, a, c);
                let p_bar = match (with_a.get(&c), with_b.get(&c)) {
                    (Some(&pa), None) => pa.max(p),
                    (None, Some(&pb)) => pb.max(p),
                    (Some(&pa), Some(&pb)) => pa.min(pb).max(p),
                    (None, None) => unreachable!(),
                };
                edges.insert((a.min(c), a.max(c)), (p, p_bar));
            }
        }
    }
    let mut voxel_ids = vec![0u32; seq.voxel_count()];
    for (&id, c) in &clusters {
        for &v in &c.members {
            voxel_ids[v as usize] = id;
        }
    }
    NaiveResult { trace, voxel_ids, local_clusters }
}

/// Dense projection onto curves constant on the level-`level` blocks;
/// `None` is the zero projection below level 0.
pub fn projection_matrix(scheme: &DyadicScheme, level: Option<usize>) -> Vec<Vec<f64>> {
    let n = scheme.len();
    let mut m = vec![vec![0.0; n]; n];
    if let Some(level) = level {
        for block in scheme.blocks(level) {
            let w = 1.0 / block.len() as f64;
            for i in block.clone() {
                for j in block.clone() {
                    m[i][j] = w;
                }
            }
        }
    }
    m
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson over `[a, b]`, started from `panels` equal pieces.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40)
        })
        .sum()
}

/// Noncentral chi-squared CDF by quadrature of the representation
/// `(Z + √λ)² + χ²(df − 1)`: condition on `Z = z` and integrate the
/// central CDF against the normal density. The substitution
/// `z = -√λ + √x sin θ` removes the square-root endpoint behaviour.
pub fn ncx2_cdf_quadrature(x: f64, df: u32, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = df - 1;
    let central = (k > 0).then(|| ChiSquared::new(k as f64).unwrap());
    let (sl, sx) = (lambda.sqrt(), x.sqrt());
    let lo = ((sl - 38.0) / sx).clamp(-1.0, 1.0).asin();
    let hi = ((sl + 38.0) / sx).clamp(-1.0, 1.0).asin();
    if hi <= lo {
        return 0.0;
    }
    let f = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let z = -sl + sx * s;
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let rest = x * c * c;
        let inner = match &central {
            Some(chi) => chi.cdf(rest),
            None => 1.0,
        };
        density * inner * sx * c
    };
    integrate(&f, lo, hi, 200, 1e-13)
}
