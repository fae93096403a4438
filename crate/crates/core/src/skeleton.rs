//! Skeleton extraction: from fitted chains to a joined skeleton graph.
//!
//! Chains are resampled into vertices, consolidated by k-nearest-neighbour
//! Laplacian smoothing and linked by a Euclidean MST whose edges longer than
//! one voxel are dropped. The fragments of that forest are then joined, one at
//! a time and cheapest first, along minimum-cost paths through the likelihood
//! grid, where stepping between 26-adjacent voxels costs the negative log of
//! their mean probability.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::RTree;

use crate::error::{Error, Result};
use crate::geometry::{Point3, SegmentChain, Vector3};
use crate::graph::{SkeletonGraph, SkeletonVertex};
use crate::likelihood::{GridSpec, LikelihoodGrid, VoxelIndex};
use crate::mst::euclidean_mst;

/// Sampled vertices closer than this are merged.
pub const DEDUP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub neighbors_k: usize,
    /// Stop once the summed vertex displacement of an iteration drops below this (m).
    pub convergence_threshold: f64,
    pub max_iterations: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            neighbors_k: 2,
            convergence_threshold: 1e-4,
            max_iterations: 1,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors_k == 0 {
            return Err(Error::Config("smoothing neighbors_k must be >= 1".into()));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(Error::Config(
                "smoothing convergence_threshold must be > 0".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config(
                "smoothing max_iterations must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSearchConfig {
    /// Voxels below this probability are left out of the path graph.
    pub p_min: f64,
    /// Paths costlier than this are never used for joining.
    pub max_path_cost: Option<f64>,
}

impl Default for PathSearchConfig {
    fn default() -> Self {
        Self {
            p_min: 0.05,
            max_path_cost: None,
        }
    }
}

impl PathSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min > 0.0 && self.p_min < 1.0) {
            return Err(Error::Config(format!(
                "p_min must be in (0, 1), got {}",
                self.p_min
            )));
        }
        if let Some(c) = self.max_path_cost {
            if !(c > 0.0) {
                return Err(Error::Config(format!("max_path_cost must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Vertex sampling and smoothing
// ---------------------------------------------------------------------------

/// Resamples every chain segment at (at most) `spacing`, endpoints included.
///
/// A segment of length `l` is cut into `ceil(l / spacing)` equal pieces.
/// Vertices within [`DEDUP_EPS`] of an earlier one are dropped.
pub fn sample_vertices(chains: &[SegmentChain], spacing: f64) -> Result<Vec<SkeletonVertex>> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Config(format!(
            "sample spacing must be > 0, got {spacing}"
        )));
    }
    let mut out: Vec<SkeletonVertex> = Vec::new();
    let mut seen: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let cell = |p: &Point3| [p.x, p.y, p.z].map(|c| (c / (spacing * 0.5)).floor() as i64);

    for chain in chains {
        for seg in chain.segments() {
            let len = seg.length();
            let pieces = ((len / spacing) - 1e-9).ceil().max(1.0) as usize;
            for i in 0..=pieces {
                let p = seg.a() + (seg.b() - seg.a()) * (i as f64 / pieces as f64);
                let key = cell(&p);
                let dup = neighbor_cells(key).any(|k| {
                    seen.get(&k).is_some_and(|ids| {
                        ids.iter()
                            .any(|&j| (out[j].position - p).norm() < DEDUP_EPS)
                    })
                });
                if dup {
                    continue;
                }
                seen.entry(key).or_default().push(out.len());
                out.push(SkeletonVertex::observed(p, chain.radius()));
            }
        }
    }
    Ok(out)
}

fn neighbor_cells(c: [i64; 3]) -> impl Iterator<Item = [i64; 3]> {
    (-1..=1).flat_map(move |dx| {
        (-1..=1).flat_map(move |dy| (-1..=1).map(move |dz| [c[0] + dx, c[1] + dy, c[2] + dz]))
    })
}

#[derive(Debug, Clone)]
pub struct SmoothingOutcome {
    pub vertices: Vec<SkeletonVertex>,
    pub iterations: usize,
    /// Summed displacement of the last iteration.
    pub last_displacement: f64,
}

type IndexedPoint = GeomWithData<[f64; 3], usize>;

/// Mean of the `k` nearest other vertices, for every vertex.
fn knn_means(positions: &[Point3], k: usize) -> Vec<Point3> {
    let n = positions.len();
    if n <= k + 1 {
        let total: Vector3 = positions.iter().map(|p| p.coords).sum();
        return positions
            .iter()
            .map(|p| Point3::from((total - p.coords) / (n - 1) as f64))
            .collect();
    }
    let tree = RTree::bulk_load(
        positions
            .iter()
            .enumerate()
            .map(|(i, p)| IndexedPoint::new([p.x, p.y, p.z], i))
            .collect(),
    );
    positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let sum: Vector3 = tree
                .nearest_neighbor_iter([p.x, p.y, p.z])
                .filter(|e| e.data != i)
                .take(k)
                .map(|e| Vector3::from(*e.geom()))
                .sum();
            Point3::from(sum / k as f64)
        })
        .collect()
}

/// Synchronous k-nearest-neighbour Laplacian smoothing.
///
/// Every iteration moves all vertices at once to the mean of their `k` nearest
/// neighbours (self excluded) in the previous positions. Stops when the summed
/// displacement drops below the threshold or after `max_iterations`.
pub fn laplacian_smooth(vertices: &[SkeletonVertex], cfg: &SmoothingConfig) -> SmoothingOutcome {
    let mut out = vertices.to_vec();
    if out.len() < 2 {
        return SmoothingOutcome {
            vertices: out,
            iterations: 0,
            last_displacement: 0.0,
        };
    }
    let mut positions: Vec<Point3> = out.iter().map(|v| v.position).collect();
    let mut iterations = 0;
    let mut displacement = 0.0;
    while iterations < cfg.max_iterations {
        let next = knn_means(&positions, cfg.neighbors_k);
        displacement = positions
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).norm())
            .sum();
        positions = next;
        iterations += 1;
        if displacement < cfg.convergence_threshold {
            break;
        }
    }
    for (v, p) in out.iter_mut().zip(positions) {
        v.position = p;
    }
    SmoothingOutcome {
        vertices: out,
        iterations,
        last_displacement: displacement,
    }
}

/// Relative slack on the edge-length cut, so that edges of exactly one voxel
/// survive rounding.
pub const EDGE_LENGTH_SLACK: f64 = 1e-9;

/// Euclidean MST over the vertices with every edge longer than `max_edge` removed.
pub fn build_initial_graph(vertices: Vec<SkeletonVertex>, max_edge: f64) -> Result<SkeletonGraph> {
    let positions: Vec<Point3> = vertices.iter().map(|v| v.position).collect();
    let edges = euclidean_mst(&positions)?;
    let cut = max_edge * (1.0 + EDGE_LENGTH_SLACK);
    let kept: Vec<(usize, usize)> = edges
        .into_iter()
        .filter(|&(u, v)| (positions[u] - positions[v]).norm() <= cut)
        .collect();
    SkeletonGraph::from_parts(vertices, &kept)
}

// ---------------------------------------------------------------------------
// Likelihood graph and path search
// ---------------------------------------------------------------------------

/// `-ln((p_u + p_v) / 2)`, clamped at zero.
pub fn edge_cost(p_u: f64, p_v: f64) -> f64 {
    (-(0.5 * (p_u + p_v)).ln()).max(0.0)
}

/// Weighted graph over the grid voxels at or above `p_min`, with edges
/// between 26-adjacent voxels.
#[derive(Debug, Clone)]
pub struct LikelihoodGraph {
    spec: GridSpec,
    nodes: Vec<VoxelIndex>,
    prob: Vec<f64>,
    lookup: HashMap<VoxelIndex, usize>,
    offsets: Vec<usize>,
    adjacency: Vec<(usize, f64)>,
}

pub fn build_likelihood_graph(grid: &LikelihoodGrid, cfg: &PathSearchConfig) -> LikelihoodGraph {
    let (nodes, prob): (Vec<_>, Vec<_>) = grid
        .sorted_cells()
        .into_iter()
        .filter(|&(_, p)| p >= cfg.p_min)
        .unzip();
    let lookup: HashMap<VoxelIndex, usize> =
        nodes.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut offsets = Vec::with_capacity(nodes.len() + 1);
    let mut adjacency = Vec::new();
    offsets.push(0);
    for (i, v) in nodes.iter().enumerate() {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let n = [v[0] + dx, v[1] + dy, v[2] + dz];
                    if let Some(&j) = lookup.get(&n) {
                        adjacency.push((j, edge_cost(prob[i], prob[j])));
                    }
                }
            }
        }
        offsets.push(adjacency.len());
    }
    LikelihoodGraph {
        spec: *grid.spec(),
        nodes,
        prob,
        lookup,
        offsets,
        adjacency,
    }
}

/// A path of voxels and its summed edge cost.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPath {
    pub voxels: Vec<VoxelIndex>,
    pub cost: f64,
}

impl LikelihoodGraph {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, idx: &VoxelIndex) -> Option<usize> {
        self.lookup.get(idx).copied()
    }

    pub fn voxel(&self, node: usize) -> VoxelIndex {
        self.nodes[node]
    }

    pub fn probability(&self, node: usize) -> f64 {
        self.prob[node]
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.len() / 2
    }

    /// Node holding `p`, if its voxel is in the graph.
    pub fn node_at(&self, p: &Point3) -> Option<usize> {
        self.spec.index_of(p).and_then(|v| self.node(&v))
    }

    fn nodes_for(&self, points: &[Point3]) -> Vec<usize> {
        let mut v: Vec<usize> = points.iter().filter_map(|p| self.node_at(p)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Multi-source Dijkstra. Ties are broken by hop count, then node index.
    fn dijkstra(&self, sources: &[usize], stop_at: Option<&[bool]>) -> Search {
        let n = self.nodes.len();
        let mut s = Search {
            dist: vec![f64::INFINITY; n],
            hops: vec![usize::MAX; n],
            pred: vec![usize::MAX; n],
            reached: None,
        };
        let mut heap = BinaryHeap::new();
        for &src in sources {
            s.dist[src] = 0.0;
            s.hops[src] = 0;
            heap.push(HeapEntry {
                cost: 0.0,
                hops: 0,
                node: src,
            });
        }
        let mut done = vec![false; n];
        while let Some(HeapEntry { cost, hops, node }) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            if stop_at.is_some_and(|t| t[node]) {
                s.reached = Some(node);
                break;
            }
            for &(next, w) in self.neighbors(node) {
                if done[next] {
                    continue;
                }
                let nc = cost + w;
                let nh = hops + 1;
                let better = match nc.total_cmp(&s.dist[next]) {
                    Ordering::Less => true,
                    Ordering::Equal => nh < s.hops[next],
                    Ordering::Greater => false,
                };
                if better {
                    s.dist[next] = nc;
                    s.hops[next] = nh;
                    s.pred[next] = node;
                    heap.push(HeapEntry {
                        cost: nc,
                        hops: nh,
                        node: next,
                    });
                }
            }
        }
        s
    }

    fn trace(&self, s: &Search, mut node: usize) -> Vec<usize> {
        let mut path = vec![node];
        while s.pred[node] != usize::MAX {
            node = s.pred[node];
            path.push(node);
        }
        path.reverse();
        path
    }
}

struct Search {
    dist: Vec<f64>,
    hops: Vec<usize>,
    pred: Vec<usize>,
    reached: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    cost: f64,
    hops: usize,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.hops.cmp(&self.hops))
            .then(other.node.cmp(&self.node))
    }
}

/// Cheapest path through `graph` from any voxel holding a point of `from` to
/// any voxel holding a point of `to`.
///
/// Points whose voxel is not in the graph are ignored. Returns `None` when
/// either side has no usable voxel or no path exists.
pub fn min_cost_path(graph: &LikelihoodGraph, from: &[Point3], to: &[Point3]) -> Option<VoxelPath> {
    let sources = graph.nodes_for(from);
    let targets = graph.nodes_for(to);
    min_cost_path_between_nodes(graph, &sources, &targets)
}

fn min_cost_path_between_nodes(
    graph: &LikelihoodGraph,
    sources: &[usize],
    targets: &[usize],
) -> Option<VoxelPath> {
    if sources.is_empty() || targets.is_empty() {
        return None;
    }
    let mut is_target = vec![false; graph.len()];
    for &t in targets {
        is_target[t] = true;
    }
    let search = graph.dijkstra(sources, Some(&is_target));
    let end = search.reached?;
    let nodes = graph.trace(&search, end);
    Some(VoxelPath {
        voxels: nodes.iter().map(|&n| graph.voxel(n)).collect(),
        cost: search.dist[end],
    })
}

// ---------------------------------------------------------------------------
// Fragment joining
// ---------------------------------------------------------------------------

/// One accepted join.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinRecord {
    pub cost: f64,
    pub voxels: usize,
    pub added_vertices: usize,
}

#[derive(Debug, Clone)]
pub struct JoinOutcome {
    pub graph: SkeletonGraph,
    pub joins: Vec<JoinRecord>,
}

struct Candidate {
    cost: f64,
    hops: usize,
    tie: (usize, usize),
    path: Vec<usize>,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        self.cost
            .total_cmp(&other.cost)
            .then(self.hops.cmp(&other.hops))
            .then(self.tie.cmp(&other.tie))
            == Ordering::Less
    }
}

/// Joins the fragments of `initial` through the likelihood graph.
///
/// Each round finds the cheapest path between any two distinct fragments,
/// splices its interior voxel centres in as path-derived vertices, and
/// repeats until no path remains (or the cheapest exceeds `max_path_cost`).
///
/// The cheapest fragment-to-fragment path is found with one multi-source
/// search labelled by fragment: the minimum over graph edges joining two
/// differently-labelled search trees equals the minimum over all fragment
/// pairs of their pairwise shortest path.
pub fn join_subgraphs(
    initial: &SkeletonGraph,
    graph: &LikelihoodGraph,
    cfg: &PathSearchConfig,
) -> Result<JoinOutcome> {
    if !initial.is_acyclic() {
        return Err(Error::Invariant("initial skeleton must be a forest".into()));
    }
    let mut skel = initial.clone();
    let mut joins = Vec::new();

    loop {
        let labels = skel.component_labels();
        // vertices per graph node, and the fragment label of each node
        let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
        for (vi, v) in skel.vertices().iter().enumerate() {
            if let Some(n) = graph.node_at(&v.position) {
                members.entry(n).or_default().push(vi);
            }
        }
        let mut node_label = vec![usize::MAX; graph.len()];
        let mut shared: Option<usize> = None;
        let mut sources: Vec<usize> = members.keys().copied().collect();
        sources.sort_unstable();
        for &n in &sources {
            let first = labels[members[&n][0]];
            if members[&n].iter().any(|&v| labels[v] != first) && shared.is_none() {
                shared = Some(n);
            }
            node_label[n] = first;
        }

        let best = if let Some(n) = shared {
            Some(Candidate {
                cost: 0.0,
                hops: 0,
                tie: (n, n),
                path: vec![n],
            })
        } else {
            best_labelled_path(graph, &sources, &node_label)
        };
        let Some(best) = best else { break };
        if cfg.max_path_cost.is_some_and(|m| best.cost > m) {
            break;
        }

        let added = splice_path(&mut skel, graph, &best.path, &members, &labels)?;
        joins.push(JoinRecord {
            cost: best.cost,
            voxels: best.path.len(),
            added_vertices: added,
        });
    }
    Ok(JoinOutcome { graph: skel, joins })
}

fn best_labelled_path(
    graph: &LikelihoodGraph,
    sources: &[usize],
    label: &[usize],
) -> Option<Candidate> {
    if sources.len() < 2 {
        return None;
    }
    let search = graph.dijkstra(sources, None);
    // propagate fragment labels down the shortest-path forest
    let mut order: Vec<usize> = (0..graph.len())
        .filter(|&n| search.dist[n].is_finite())
        .collect();
    order.sort_by(|&a, &b| {
        search.dist[a]
            .total_cmp(&search.dist[b])
            .then(search.hops[a].cmp(&search.hops[b]))
    });
    let mut lab = label.to_vec();
    for &n in &order {
        if lab[n] == usize::MAX {
            lab[n] = lab[search.pred[n]];
        }
    }

    let mut best: Option<(f64, usize, (usize, usize))> = None;
    for x in 0..graph.len() {
        if !search.dist[x].is_finite() {
            continue;
        }
        for &(y, w) in graph.neighbors(x) {
            if y <= x || !search.dist[y].is_finite() || lab[x] == lab[y] {
                continue;
            }
            let cost = search.dist[x] + w + search.dist[y];
            let hops = search.hops[x] + 1 + search.hops[y];
            let key = (cost, hops, (x, y));
            let better = best.is_none_or(|b| {
                key.0
                    .total_cmp(&b.0)
                    .then(key.1.cmp(&b.1))
                    .then(key.2.cmp(&b.2))
                    == Ordering::Less
            });
            if better {
                best = Some(key);
            }
        }
    }
    let (cost, hops, (x, y)) = best?;
    let mut path = graph.trace(&search, x);
    let mut tail = graph.trace(&search, y);
    tail.reverse();
    path.extend(tail);
    let cand = Candidate {
        cost,
        hops,
        tie: (x, y),
        path,
    };
    debug_assert!(!cand.better_than(&cand));
    Some(cand)
}

/// Adds the interior voxels of `path` as path-derived vertices and links the
/// fragments at both ends. Returns the number of vertices added.
fn splice_path(
    skel: &mut SkeletonGraph,
    graph: &LikelihoodGraph,
    path: &[usize],
    members: &HashMap<usize, Vec<usize>>,
    labels: &[usize],
) -> Result<usize> {
    let spec = *graph.spec();
    let center = |n: usize| spec.center(&graph.voxel(n));
    let nearest = |candidates: &[usize], target: &Point3| -> usize {
        *candidates
            .iter()
            .min_by(|&&a, &&b| {
                let da = (skel.vertices()[a].position - target).norm_squared();
                let db = (skel.vertices()[b].position - target).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("non-empty member list")
    };

    let (start, end) = if path.len() == 1 {
        // two fragments share a voxel: link their closest pair of vertices
        let vs = &members[&path[0]];
        let mut best: Option<(f64, usize, usize)> = None;
        for &a in vs {
            for &b in vs {
                if labels[a] < labels[b] {
                    let d = (skel.vertices()[a].position - skel.vertices()[b].position).norm();
                    if best.is_none_or(|(bd, ba, bb)| (d, a, b) < (bd, ba, bb)) {
                        best = Some((d, a, b));
                    }
                }
            }
        }
        let (_, a, b) =
            best.ok_or_else(|| Error::Invariant("shared voxel without two fragments".into()))?;
        (a, b)
    } else {
        let first = path[0];
        let last = *path.last().expect("non-empty");
        let start = nearest(&members[&first], &center(path[1]));
        let end = nearest(&members[&last], &center(path[path.len() - 2]));
        (start, end)
    };
    if labels[start] == labels[end] {
        return Err(Error::Invariant(
            "join path connects a fragment to itself".into(),
        ));
    }

    let r0 = skel.vertices()[start].radius;
    let r1 = skel.vertices()[end].radius;
    let interior = if path.len() > 2 {
        &path[1..path.len() - 1]
    } else {
        &[][..]
    };
    let steps = interior.len() + 1;
    let mut prev = start;
    for (i, &n) in interior.iter().enumerate() {
        let t = (i + 1) as f64 / steps as f64;
        let v = skel.add_vertex(SkeletonVertex::path_derived(center(n), r0 + (r1 - r0) * t));
        skel.add_edge(prev, v)?;
        prev = v;
    }
    skel.add_edge(prev, end)?;
    Ok(interior.len())
}
