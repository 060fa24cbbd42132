mod common;

use common::{naive_segment, normals, random_piecewise, rng};
use eqseg_core::clustering::ClusterState;
use eqseg_core::{
    control, segment_stabilized, Connectivity, DyadicScheme, Grid, MarginSpec, PairTest, Phase, SegmentParams,
    Segmentation, StabilizedSequence,
};

fn voxel_ids(seg: &Segmentation) -> Vec<u32> {
    seg.labels.labels().iter().map(|&l| seg.cluster_ids[l as usize]).collect()
}

fn assert_same_as_oracle(seq: &StabilizedSequence, params: &SegmentParams, context: &str) {
    let seg = segment_stabilized(seq, params).unwrap();
    let naive = naive_segment(seq, params);
    assert_eq!(seg.trace.len(), naive.trace.len(), "{context}: trace lengths");
    for (a, b) in seg.trace.iter().zip(&naive.trace) {
        assert_eq!(a, b, "{context}");
    }
    assert_eq!(seg.local_clusters, naive.local_clusters, "{context}");
    assert_eq!(voxel_ids(&seg), naive.voxel_ids, "{context}");
}

#[test]
fn traces_match_naive_rescan_on_small_grids() {
    let mut cases = 0;
    for seed in 0..40u64 {
        let mut r = rng(1000 + seed);
        let w = 2 + (seed as usize % 5);
        let h = 2 + (seed as usize / 5 % 5);
        for n in [8, 16] {
            let seq = random_piecewise(w, h, n, seed * 31 + n as u64);
            let delta = 0.3 + 1.4 * normals(&mut r, 1)[0].abs().min(1.0);
            let connectivity = if seed % 3 == 0 { Some(Connectivity::Eight) } else { None };
            let params = SegmentParams { delta, connectivity, alpha: 0.05, ..SegmentParams::default() };
            assert_same_as_oracle(&seq, &params, &format!("{w}x{h} n={n} seed={seed}"));
            cases += 1;
        }
    }
    assert_eq!(cases, 80);
}

#[test]
fn traces_match_naive_rescan_on_3d_grid() {
    let grid = Grid::new(vec![3, 3, 2]).unwrap();
    let n = 8;
    for seed in 0..5u64 {
        let mut r = rng(seed);
        let data: Vec<f64> = (0..grid.voxel_count())
            .flat_map(|v| {
                let offset = if v % 3 == 0 { 1.5 } else { 0.0 };
                normals(&mut r, n).into_iter().map(move |z| z + offset)
            })
            .collect();
        let seq = StabilizedSequence::from_stabilized(grid.clone(), (0..n).map(|j| j as f64).collect(), data).unwrap();
        for connectivity in [None, Some(Connectivity::TwentySix)] {
            let params = SegmentParams { delta: 0.9, connectivity, ..SegmentParams::default() };
            assert_same_as_oracle(&seq, &params, &format!("3d seed={seed}"));
        }
    }
}

#[test]
fn corrected_dissimilarities_never_decrease_within_a_phase() {
    for seed in 0..30u64 {
        let seq = random_piecewise(8, 8, 16, 500 + seed);
        let seg = segment_stabilized(&seq, &SegmentParams { delta: 0.8, ..SegmentParams::default() }).unwrap();
        for w in seg.trace.windows(2) {
            if w[0].phase == w[1].phase {
                assert!(w[0].p_corrected <= w[1].p_corrected, "seed {seed}: {:?} then {:?}", w[0], w[1]);
            }
        }
        assert!(seg.trace.iter().all(|r| r.p_corrected < r.control && r.p_raw <= r.p_corrected));
    }
}

#[test]
fn stopped_phases_have_no_mergeable_pair() {
    for seed in 0..20u64 {
        let seq = random_piecewise(7, 6, 16, 700 + seed);
        let n = seq.time_count();
        let test = PairTest::new(DyadicScheme::new(n).unwrap(), MarginSpec::new(0.7, n).unwrap()).unwrap();
        let mut state = ClusterState::init_local(&seq, Connectivity::Four, test, 0.01).unwrap();
        state.run_phase();
        state.verify_stopped().unwrap();
        let local = state.cluster_count();
        state.start_global();
        state.run_phase();
        state.verify_stopped().unwrap();
        assert!(state.cluster_count() <= local);

        // every stored sum is the sum of its members' curves
        for id in state.cluster_ids().collect::<Vec<_>>() {
            let mut expected = vec![0.0; n];
            for &v in state.cluster_members(id) {
                for (e, x) in expected.iter_mut().zip(seq.curve(v as usize)) {
                    *e += x;
                }
            }
            assert_eq!(*state.cluster_members(id).iter().min().unwrap(), id);
            for (a, b) in state.cluster_sum(id).iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }
}

#[test]
fn means_are_member_averages() {
    let seq = random_piecewise(10, 10, 32, 3);
    let seg = segment_stabilized(&seq, &SegmentParams::with_delta(1.0)).unwrap();
    let n = seq.time_count();
    for (label, members) in seg.labels.members().iter().enumerate() {
        assert_eq!(members.len(), seg.sizes[label]);
        for j in 0..n {
            let mean = members.iter().map(|&v| seq.curve(v)[j]).sum::<f64>() / members.len() as f64;
            let got = seg.mean_curve(label)[j];
            assert!((got - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        }
    }
    assert!(seg.sizes.windows(2).all(|w| w[0] >= w[1]));
    assert!(seg.final_clusters <= seg.local_clusters && seg.local_clusters <= seq.voxel_count());
}

/// Columns 0–2 and 6–8 share a curve, columns 3–5 differ.
fn three_bands(seed: u64) -> StabilizedSequence {
    let grid = Grid::new_2d(9, 9).unwrap();
    let n = 32;
    let mut r = rng(seed);
    let data = (0..81)
        .flat_map(|v| {
            let x = v % 9;
            let level = if (3..6).contains(&x) { 4.0 } else { 0.0 };
            normals(&mut r, n).into_iter().map(move |z| z + level)
        })
        .collect();
    StabilizedSequence::from_stabilized(grid, (0..n).map(|j| j as f64).collect(), data).unwrap()
}

#[test]
fn global_phase_joins_disconnected_twins() {
    let seq = three_bands(5);
    let params = SegmentParams::with_delta(1.0);
    let local_only = segment_stabilized(&seq, &SegmentParams { skip_global: true, ..params.clone() }).unwrap();
    assert!(local_only.final_clusters >= 3);
    let seg = segment_stabilized(&seq, &params).unwrap();
    assert_eq!(seg.final_clusters, 2);
    let global: Vec<_> = seg.trace.iter().filter(|r| r.phase == Phase::Global).collect();
    assert!(!global.is_empty());
    // the outer bands carry IDs 0 and 6 (first voxel of column 6)
    let first = global[0];
    assert_eq!((first.id_a, first.id_b), (0, 6));

    // direct evaluation: the twin pair is the global minimum and below control
    let n = seq.time_count();
    let test = PairTest::new(DyadicScheme::new(n).unwrap(), MarginSpec::new(1.0, n).unwrap()).unwrap();
    let sum_of = |cols: std::ops::Range<usize>| {
        let mut s = vec![0.0; n];
        let mut size = 0;
        for v in 0..81 {
            if cols.contains(&(v % 9)) {
                size += 1;
                for (a, b) in s.iter_mut().zip(seq.curve(v)) {
                    *a += b;
                }
            }
        }
        (s, size)
    };
    let ((l, nl), (m, nm), (rr, nr)) = (sum_of(0..3), sum_of(3..6), sum_of(6..9));
    let twins = test.p_value(&l, nl, &rr, nr);
    assert!(twins < control(3, 0.001, 4).unwrap());
    assert!(twins < test.p_value(&l, nl, &m, nm) && twins < test.p_value(&m, nm, &rr, nr));
}

#[test]
fn single_local_cluster_skips_global_work() {
    let grid = Grid::new_2d(4, 4).unwrap();
    let data = vec![1.0; 16 * 8];
    let seq = StabilizedSequence::from_stabilized(grid, (0..8).map(|j| j as f64).collect(), data).unwrap();
    let seg = segment_stabilized(&seq, &SegmentParams::with_delta(0.5)).unwrap();
    assert_eq!((seg.local_clusters, seg.final_clusters), (1, 1));
    assert!(seg.trace.iter().all(|r| r.phase == Phase::Local));
}

#[test]
fn zero_margin_barely_merges_noise() {
    let grid = Grid::new_2d(16, 16).unwrap();
    let n = 32;
    let mut r = rng(77);
    let seq = StabilizedSequence::from_stabilized(grid, (0..n).map(|j| j as f64).collect(), normals(&mut r, 256 * n))
        .unwrap();
    let seg = segment_stabilized(&seq, &SegmentParams::with_delta(0.0)).unwrap();
    assert!(seg.final_clusters as f64 > 0.9 * 256.0, "{}", seg.final_clusters);
}

#[test]
fn huge_margin_merges_everything() {
    let seq = random_piecewise(12, 12, 64, 9);
    let delta = 10.0 * eqseg_core::min_margin(64, 11.0).unwrap().delta_min;
    let seg = segment_stabilized(&seq, &SegmentParams::with_delta(delta)).unwrap();
    assert_eq!(seg.final_clusters, 1);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let seq = random_piecewise(20, 20, 32, 4);
    let params = SegmentParams::with_delta(0.6);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| segment_stabilized(&seq, &params).unwrap())
    };
    let one = run(1);
    for threads in [2, 4, 7] {
        let other = run(threads);
        assert_eq!(one.labels, other.labels);
        assert_eq!(one.trace.len(), other.trace.len());
        for (a, b) in one.trace.iter().zip(&other.trace) {
            assert_eq!(a.p_corrected.to_bits(), b.p_corrected.to_bits());
            assert_eq!(a, b);
        }
        assert!(one.means.iter().zip(&other.means).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
