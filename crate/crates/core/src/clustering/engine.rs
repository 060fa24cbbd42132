//! Agglomerative merge loop with a lazy-deletion priority queue.
//!
//! Clusters live in slots indexed by their stable ID, the smallest voxel
//! index they contain; a merge keeps the smaller of the two IDs. Every slot
//! carries a generation counter bumped on each merge, and queue entries
//! remember the generations they were computed against, so stale entries are
//! recognized and dropped when popped.
//!
//! No pair whose corrected dissimilarity reaches `c_α(2)`, the largest value
//! the control function takes, can ever be merged, and the correction rule
//! never lowers such a value below that ceiling. The global phase exploits
//! this: pairs at or above the ceiling are not stored, which keeps the
//! all-pairs phase sparse.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::control;
use crate::equivtest::PairTest;
use crate::error::Result;
use crate::grid::Connectivity;
use crate::model::StabilizedSequence;

const PARALLEL_MIN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Local,
    Global,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Local => "local",
            Phase::Global => "global",
        }
    }
}

/// One merge, as logged in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    /// Number of merges performed before this one.
    pub iteration: usize,
    pub phase: Phase,
    pub id_a: u32,
    pub id_b: u32,
    pub new_id: u32,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub control: f64,
    /// Cluster count before the merge.
    pub ell: usize,
}

/// Raw and corrected dissimilarity of an active pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub p_raw: f64,
    pub p_bar: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    p_bar: f64,
    a: u32,
    b: u32,
    gen_a: u32,
    gen_b: u32,
}

impl Candidate {
    fn key(&self) -> (f64, u32, u32) {
        (self.p_bar, self.a, self.b)
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        let (pa, a1, b1) = self.key();
        let (pb, a2, b2) = other.key();
        pa.total_cmp(&pb)
            .then(a1.cmp(&a2))
            .then(b1.cmp(&b2))
            .then(self.gen_a.cmp(&other.gen_a))
            .then(self.gen_b.cmp(&other.gen_b))
    }
}

/// Running partition of the grid during agglomeration.
pub struct ClusterState {
    test: PairTest,
    alpha: f64,
    n: usize,
    voxel_count: usize,
    sums: Vec<f64>,
    sizes: Vec<usize>,
    members: Vec<Vec<u32>>,
    generation: Vec<u32>,
    alive: BTreeSet<u32>,
    /// Stored pairs, mirrored on both endpoints.
    edges: Vec<BTreeMap<u32, Edge>>,
    heap: BinaryHeap<Reverse<Candidate>>,
    phase: Phase,
    merges: usize,
    local_clusters: Option<usize>,
    ceiling: f64,
    trace: Vec<MergeRecord>,
}

impl ClusterState {
    /// Singleton clusters with grid adjacency; raw p-values are computed for
    /// every adjacent pair and the corrected values start equal to them.
    pub fn init_local(
        seq: &StabilizedSequence,
        connectivity: Connectivity,
        test: PairTest,
        alpha: f64,
    ) -> Result<Self> {
        let n = seq.time_count();
        if n != test.scheme().len() {
            return Err(crate::Error::shape(format!(
                "sequence has {n} retained times, test expects {}",
                test.scheme().len()
            )));
        }
        let voxel_count = seq.voxel_count();
        // validates α and the scale count once
        let ceiling = control(2, alpha, test.scheme().finest_level())?;
        let pairs = seq.grid().neighbor_pairs(connectivity)?;
        let sums = seq.data().to_vec();
        let raw: Vec<f64> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let (a, b) = (a as usize, b as usize);
                test.p_value(&sums[a * n..(a + 1) * n], 1, &sums[b * n..(b + 1) * n], 1)
            })
            .collect();

        let mut state = Self {
            test,
            alpha,
            n,
            voxel_count,
            sums,
            sizes: vec![1; voxel_count],
            members: (0..voxel_count as u32).map(|v| vec![v]).collect(),
            generation: vec![0; voxel_count],
            alive: (0..voxel_count as u32).collect(),
            edges: vec![BTreeMap::new(); voxel_count],
            heap: BinaryHeap::new(),
            phase: Phase::Local,
            merges: 0,
            local_clusters: None,
            ceiling,
            trace: Vec::new(),
        };
        for (&(a, b), &p) in pairs.iter().zip(&raw) {
            state.set_edge(a, b, Edge { p_raw: p, p_bar: p });
        }
        Ok(state)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn test(&self) -> &PairTest {
        &self.test
    }

    /// Current cluster count `ℓ`.
    pub fn cluster_count(&self) -> usize {
        self.alive.len()
    }

    /// Number of merges so far, `ℓ̄`.
    pub fn merge_count(&self) -> usize {
        self.merges
    }

    /// Cluster count at the end of the local phase, once known.
    pub fn local_cluster_count(&self) -> Option<usize> {
        self.local_clusters
    }

    pub fn trace(&self) -> &[MergeRecord] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<MergeRecord> {
        self.trace
    }

    /// Stable IDs of the current clusters, increasing.
    pub fn cluster_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.alive.iter().copied()
    }

    pub fn cluster_size(&self, id: u32) -> usize {
        self.sizes[id as usize]
    }

    pub fn cluster_sum(&self, id: u32) -> &[f64] {
        let i = id as usize;
        &self.sums[i * self.n..(i + 1) * self.n]
    }

    pub fn cluster_members(&self, id: u32) -> &[u32] {
        &self.members[id as usize]
    }

    /// Cluster ID of every voxel.
    pub fn voxel_labels(&self) -> Vec<u32> {
        let mut out = vec![0; self.voxel_count];
        for &id in &self.alive {
            for &v in &self.members[id as usize] {
                out[v as usize] = id;
            }
        }
        out
    }

    /// The stored pair data, if the pair is active and below the ceiling in
    /// the global phase.
    pub fn edge(&self, a: u32, b: u32) -> Option<Edge> {
        self.edges[a as usize].get(&b).copied()
    }

    /// All stored pairs `(a, b, edge)` with `a < b`.
    pub fn stored_pairs(&self) -> Vec<(u32, u32, Edge)> {
        let mut out = Vec::new();
        for &a in &self.alive {
            for (&b, &e) in self.edges[a as usize].range(a + 1..) {
                out.push((a, b, e));
            }
        }
        out
    }

    /// Neighbor IDs of a cluster in the local phase.
    pub fn neighbors(&self, id: u32) -> Vec<u32> {
        self.edges[id as usize].keys().copied().collect()
    }

    /// Largest control value, `c_α(2)`; pairs at or above it never merge.
    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    /// Control threshold at the current cluster count.
    pub fn current_control(&self) -> Option<f64> {
        let ell = self.cluster_count();
        (ell >= 2).then(|| control(ell, self.alpha, self.test.scheme().finest_level()).expect("validated"))
    }

    fn set_edge(&mut self, a: u32, b: u32, edge: Edge) {
        self.edges[a as usize].insert(b, edge);
        self.edges[b as usize].insert(a, edge);
        if edge.p_bar < self.ceiling {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            self.heap.push(Reverse(Candidate {
                p_bar: edge.p_bar,
                a: lo,
                b: hi,
                gen_a: self.generation[lo as usize],
                gen_b: self.generation[hi as usize],
            }));
        }
    }

    fn pop_best(&mut self) -> Option<Candidate> {
        while let Some(Reverse(c)) = self.heap.pop() {
            if self.generation[c.a as usize] == c.gen_a
                && self.generation[c.b as usize] == c.gen_b
                && self.alive.contains(&c.a)
                && self.alive.contains(&c.b)
            {
                return Some(c);
            }
        }
        None
    }

    /// Merges the best pair while its corrected dissimilarity stays below
    /// the control value at the current cluster count. Returns the number of
    /// merges performed.
    pub fn run_phase(&mut self) -> usize {
        let start = self.merges;
        let k0 = self.test.scheme().finest_level();
        while self.cluster_count() >= 2 {
            let ell = self.cluster_count();
            let threshold = control(ell, self.alpha, k0).expect("validated");
            let Some(best) = self.pop_best() else { break };
            if !(best.p_bar < threshold) {
                self.heap.push(Reverse(best));
                break;
            }
            let p_raw = self.edges[best.a as usize][&best.b].p_raw;
            self.trace.push(MergeRecord {
                iteration: self.merges,
                phase: self.phase,
                id_a: best.a,
                id_b: best.b,
                new_id: best.a,
                p_raw,
                p_corrected: best.p_bar,
                control: threshold,
                ell,
            });
            self.merge(best.a, best.b);
        }
        if self.phase == Phase::Local && self.local_clusters.is_none() {
            self.local_clusters = Some(self.cluster_count());
        }
        self.merges - start
    }

    fn merge(&mut self, keep: u32, gone: u32) {
        debug_assert!(keep < gone);
        let (k, g) = (keep as usize, gone as usize);
        let n = self.n;

        let mut edges_keep = std::mem::take(&mut self.edges[k]);
        let mut edges_gone = std::mem::take(&mut self.edges[g]);
        edges_keep.remove(&gone);
        edges_gone.remove(&keep);
        for other in edges_keep.keys().chain(edges_gone.keys()) {
            let e = &mut self.edges[*other as usize];
            e.remove(&keep);
            e.remove(&gone);
        }

        // fold B's curve sum and members into A
        let (head, tail) = self.sums.split_at_mut(g * n);
        for (x, y) in head[k * n..(k + 1) * n].iter_mut().zip(&tail[..n]) {
            *x += *y;
        }
        self.sizes[k] += self.sizes[g];
        self.sizes[g] = 0;
        let mut moved = std::mem::take(&mut self.members[g]);
        if moved.len() > self.members[k].len() {
            std::mem::swap(&mut moved, &mut self.members[k]);
        }
        self.members[k].extend(moved);
        self.alive.remove(&gone);
        self.generation[k] += 1;
        self.generation[g] += 1;
        self.merges += 1;

        let updates: Vec<(u32, Option<Edge>)> = match self.phase {
            Phase::Local => {
                let others: Vec<u32> =
                    edges_keep.keys().chain(edges_gone.keys()).copied().collect::<BTreeSet<_>>().into_iter().collect();
                self.map_others(&others, |state, c| {
                    let p = state.pair_p(keep, c);
                    let p_bar = match (edges_keep.get(&c), edges_gone.get(&c)) {
                        (Some(a), None) => a.p_bar.max(p),
                        (None, Some(b)) => b.p_bar.max(p),
                        (Some(a), Some(b)) => a.p_bar.min(b.p_bar).max(p),
                        (None, None) => unreachable!("neighbor of neither merged cluster"),
                    };
                    Some(Edge { p_raw: p, p_bar })
                })
            }
            Phase::Global => {
                // every pair is a neighbor pair; absent entries sit at or above the ceiling
                let others: Vec<u32> =
                    edges_keep.keys().chain(edges_gone.keys()).copied().collect::<BTreeSet<_>>().into_iter().collect();
                let ceiling = self.ceiling;
                self.map_others(&others, |state, c| {
                    let inf = f64::INFINITY;
                    let a = edges_keep.get(&c).map_or(inf, |e| e.p_bar);
                    let b = edges_gone.get(&c).map_or(inf, |e| e.p_bar);
                    let carried = a.min(b);
                    if carried >= ceiling {
                        return None;
                    }
                    let p = state.pair_p_below(keep, c, ceiling)?;
                    Some(Edge { p_raw: p, p_bar: carried.max(p) })
                })
            }
        };
        for (c, edge) in updates {
            match edge {
                Some(e) => self.set_edge(keep, c, e),
                None if self.phase == Phase::Local => unreachable!(),
                None => {}
            }
        }
    }

    fn map_others<F>(&self, others: &[u32], f: F) -> Vec<(u32, Option<Edge>)>
    where
        F: Fn(&Self, u32) -> Option<Edge> + Sync,
    {
        if others.len() >= PARALLEL_MIN {
            others.par_iter().map(|&c| (c, f(self, c))).collect()
        } else {
            others.iter().map(|&c| (c, f(self, c))).collect()
        }
    }

    fn pair_p(&self, a: u32, b: u32) -> f64 {
        self.test.p_value(self.cluster_sum(a), self.sizes[a as usize], self.cluster_sum(b), self.sizes[b as usize])
    }

    fn pair_p_below(&self, a: u32, b: u32, cap: f64) -> Option<f64> {
        self.test.p_value_below(
            self.cluster_sum(a),
            self.sizes[a as usize],
            self.cluster_sum(b),
            self.sizes[b as usize],
            cap,
        )
    }

    /// Switches to the all-pairs phase. Pairs that were grid neighbors keep
    /// their corrected dissimilarity; new pairs start at their raw p-value.
    pub fn start_global(&mut self) {
        if self.local_clusters.is_none() {
            self.local_clusters = Some(self.cluster_count());
        }
        self.phase = Phase::Global;
        let ids: Vec<u32> = self.alive.iter().copied().collect();
        let ceiling = self.ceiling;
        let rows: Vec<Vec<(u32, u32, Edge)>> = ids
            .par_iter()
            .enumerate()
            .map(|(i, &a)| {
                ids[i + 1..]
                    .iter()
                    .filter_map(|&b| match self.edges[a as usize].get(&b) {
                        Some(e) => (e.p_bar < ceiling).then_some((a, b, *e)),
                        None => self.pair_p_below(a, b, ceiling).map(|p| (a, b, Edge { p_raw: p, p_bar: p })),
                    })
                    .collect()
            })
            .collect();
        for e in &mut self.edges {
            e.clear();
        }
        self.heap.clear();
        for (a, b, e) in rows.into_iter().flatten() {
            self.set_edge(a, b, e);
        }
    }

    /// Full scan confirming that no stored pair is mergeable under the
    /// current control value. Pairs dropped in the global phase have a
    /// corrected dissimilarity at or above the ceiling by construction.
    pub fn verify_stopped(&self) -> std::result::Result<(), String> {
        let Some(threshold) = self.current_control() else { return Ok(()) };
        for (a, b, e) in self.stored_pairs() {
            if e.p_bar < threshold {
                return Err(format!("pair ({a}, {b}) has corrected p {} below control {threshold}", e.p_bar));
            }
            if e.p_raw > e.p_bar {
                return Err(format!("pair ({a}, {b}) has raw p above its corrected value"));
            }
        }
        Ok(())
    }
}
