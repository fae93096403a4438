//! Procedural trees and simulated occluded observations.
//!
//! A tree is grown recursively from a near-vertical trunk. Its centreline is
//! sampled every [`GT_SPACING`] metres into a ground-truth skeleton. Observations
//! are surface points on the branch cylinders, culled to the sides facing a set
//! of horizontal viewpoints, cut by spherical occluders, split into slender
//! clusters and perturbed with bounded Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, BranchCluster, Point3, Vector3};
use crate::graph::{SkeletonGraph, SkeletonVertex};

/// Ground-truth centreline sample spacing (m).
pub const GT_SPACING: f64 = 0.01;

/// Noise vectors longer than this many sigmas are redrawn.
pub const NOISE_TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Oak,
    Apple,
    Walnut,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::Oak, Species::Apple, Species::Walnut];

    pub fn name(self) -> &'static str {
        match self {
            Species::Oak => "oak",
            Species::Apple => "apple",
            Species::Walnut => "walnut",
        }
    }
}

impl std::str::FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Species::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown species '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeGenParams {
    pub rng_seed: u64,
    /// Branching levels including the trunk.
    pub depth: u32,
    pub children_min: u32,
    pub children_max: u32,
    pub branch_length_decay: f64,
    pub branch_radius_decay: f64,
    pub trunk_length: f64,
    pub trunk_radius: f64,
    pub branching_angle_min_deg: f64,
    pub branching_angle_max_deg: f64,
    /// Largest sideways bow of a branch, as a fraction of its length.
    pub curvature: f64,
}

impl Default for TreeGenParams {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            depth: 4,
            children_min: 2,
            children_max: 4,
            branch_length_decay: 0.7,
            branch_radius_decay: 0.6,
            trunk_length: 1.0,
            trunk_radius: 0.05,
            branching_angle_min_deg: 20.0,
            branching_angle_max_deg: 60.0,
            curvature: 0.08,
        }
    }
}

impl TreeGenParams {
    pub fn preset(species: Species, rng_seed: u64) -> Self {
        let base = Self {
            rng_seed,
            ..Self::default()
        };
        match species {
            Species::Oak => Self {
                branching_angle_min_deg: 35.0,
                branching_angle_max_deg: 60.0,
                ..base
            },
            Species::Apple => Self {
                children_max: 3,
                branch_length_decay: 0.65,
                trunk_length: 0.8,
                trunk_radius: 0.045,
                branching_angle_min_deg: 40.0,
                branching_angle_max_deg: 60.0,
                ..base
            },
            Species::Walnut => Self {
                children_max: 3,
                branch_length_decay: 0.75,
                branch_radius_decay: 0.65,
                trunk_length: 1.2,
                trunk_radius: 0.06,
                branching_angle_min_deg: 20.0,
                branching_angle_max_deg: 45.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth < 1 {
            return bad("tree depth must be >= 1".into());
        }
        if self.children_min < 1 || self.children_min > self.children_max {
            return bad(format!(
                "children range {}..={} is empty or starts below 1",
                self.children_min, self.children_max
            ));
        }
        for (name, v) in [
            ("branch_length_decay", self.branch_length_decay),
            ("branch_radius_decay", self.branch_radius_decay),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {v}"));
            }
        }
        if !(self.trunk_length > 0.0 && self.trunk_length.is_finite()) {
            return bad(format!(
                "trunk_length must be > 0, got {}",
                self.trunk_length
            ));
        }
        if !(self.trunk_radius > 0.0 && self.trunk_radius.is_finite()) {
            return bad(format!(
                "trunk_radius must be > 0, got {}",
                self.trunk_radius
            ));
        }
        let (lo, hi) = (self.branching_angle_min_deg, self.branching_angle_max_deg);
        if !(lo > 0.0 && lo <= hi && hi < 180.0) {
            return bad(format!(
                "branching angle range {lo}..={hi} must lie in (0, 180)"
            ));
        }
        if !(0.0..=0.5).contains(&self.curvature) {
            return bad(format!(
                "curvature must be in [0, 0.5], got {}",
                self.curvature
            ));
        }
        Ok(())
    }
}

/// Generated tree: the densely sampled centreline skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub skeleton: SkeletonGraph,
    pub branch_count: usize,
}

struct Grower<'a> {
    params: &'a TreeGenParams,
    rng: ChaCha8Rng,
    graph: SkeletonGraph,
    branches: usize,
}

fn perpendicular(t: &Vector3) -> (Vector3, Vector3) {
    let helper = if t.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = t.cross(&helper).normalize();
    (e1, t.cross(&e1))
}

impl Grower<'_> {
    fn branch(
        &mut self,
        root: usize,
        dir: Vector3,
        length: f64,
        radius: f64,
        level: u32,
    ) -> Result<()> {
        self.branches += 1;
        let a = self.graph.vertices()[root].position;
        let b = a + dir * length;
        let (e1, e2) = perpendicular(&dir);
        let phi = self.rng.random_range(0.0..2.0 * PI);
        let bow = self.params.curvature * length * self.rng.random_range(-1.0..=1.0);
        let ctrl =
            Point3::from((a.coords + b.coords) * 0.5) + (e1 * phi.cos() + e2 * phi.sin()) * bow;
        let bezier = |s: f64| {
            Point3::from(
                a.coords * (1.0 - s).powi(2)
                    + ctrl.coords * (2.0 * s * (1.0 - s))
                    + b.coords * (s * s),
            )
        };

        // arc-length table, then resample at the ground-truth spacing
        const FINE: usize = 512;
        let fine: Vec<Point3> = (0..=FINE).map(|i| bezier(i as f64 / FINE as f64)).collect();
        let mut cum = vec![0.0; FINE + 1];
        for i in 1..=FINE {
            cum[i] = cum[i - 1] + (fine[i] - fine[i - 1]).norm();
        }
        let arc = cum[FINE];
        let pieces = (arc / GT_SPACING).ceil().max(1.0) as usize;
        let mut ids = vec![root];
        let mut j = 0;
        for k in 1..=pieces {
            let target = arc * k as f64 / pieces as f64;
            while j + 1 < FINE && cum[j + 1] < target {
                j += 1;
            }
            let span = cum[j + 1] - cum[j];
            let w = if span > 0.0 {
                ((target - cum[j]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let p = fine[j] + (fine[j + 1] - fine[j]) * w;
            let id = self.graph.add_vertex(SkeletonVertex::observed(p, radius));
            self.graph.add_edge(*ids.last().expect("root"), id)?;
            ids.push(id);
        }

        if level + 1 >= self.params.depth {
            return Ok(());
        }
        let count = self
            .rng
            .random_range(self.params.children_min..=self.params.children_max);
        let phase = self.rng.random_range(0.0..2.0 * PI);
        let mut attach: Vec<f64> = (0..count)
            .map(|_| self.rng.random_range(0.3..0.95))
            .collect();
        attach.sort_by(f64::total_cmp);
        for (c, f) in attach.into_iter().enumerate() {
            let at = ((f * pieces as f64).round() as usize).clamp(1, pieces);
            let prev = self.graph.vertices()[ids[at - 1]].position;
            let here = self.graph.vertices()[ids[at]].position;
            let tangent = (here - prev).normalize();
            let (t1, t2) = perpendicular(&tangent);
            let az = phase + 2.0 * PI * c as f64 / count as f64 + self.rng.random_range(-0.4..0.4);
            let theta = self
                .rng
                .random_range(
                    self.params.branching_angle_min_deg..=self.params.branching_angle_max_deg,
                )
                .to_radians();
            let child_dir = tangent * theta.cos() + (t1 * az.cos() + t2 * az.sin()) * theta.sin();
            let child_len =
                length * self.params.branch_length_decay * self.rng.random_range(0.9..1.1);
            let child_r = radius * self.params.branch_radius_decay;
            self.branch(
                ids[at],
                child_dir.normalize(),
                child_len,
                child_r,
                level + 1,
            )?;
        }
        Ok(())
    }
}

/// Grows a tree from `params`. The same parameters always give the same tree.
pub fn generate_tree(params: &TreeGenParams) -> Result<GroundTruth> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let tilt = rng.random_range(0.0..5f64.to_radians());
    let az = rng.random_range(0.0..2.0 * PI);
    let dir = Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos());
    let mut graph = SkeletonGraph::new();
    let root = graph.add_vertex(SkeletonVertex::observed(
        Point3::origin(),
        params.trunk_radius,
    ));
    let mut g = Grower {
        params,
        rng,
        graph,
        branches: 0,
    };
    g.branch(root, dir, params.trunk_length, params.trunk_radius, 0)?;
    Ok(GroundTruth {
        skeleton: g.graph,
        branch_count: g.branches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionParams {
    pub rng_seed: u64,
    /// Foliage density, 1 (sparse) to 4 (dense).
    pub foliage_density_level: u8,
    /// Occluders per cubic metre of canopy box, per density level.
    pub occluders_per_m3_per_level: f64,
    pub occluder_radius_min: f64,
    pub occluder_radius_max: f64,
    /// Candidate surface points per square metre of full cylinder surface.
    pub surface_point_density: f64,
    pub point_noise_sigma: f64,
    pub confidence_min: f64,
    pub confidence_max: f64,
    pub max_cluster_length: f64,
    /// Runs with fewer surviving points are not emitted as clusters.
    pub min_cluster_points: usize,
    /// Runs shorter than this many branch diameters are not emitted either.
    pub min_cluster_slenderness: f64,
    /// Horizontal viewing directions; a surface point is kept if it faces any.
    pub view_azimuths_deg: Vec<f64>,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            foliage_density_level: 1,
            occluders_per_m3_per_level: 15.0,
            occluder_radius_min: 0.05,
            occluder_radius_max: 0.20,
            surface_point_density: 20_000.0,
            point_noise_sigma: 0.002,
            confidence_min: 0.6,
            confidence_max: 0.99,
            max_cluster_length: 0.25,
            min_cluster_points: 10,
            min_cluster_slenderness: 2.0,
            view_azimuths_deg: vec![0.0, 120.0, 240.0],
        }
    }
}

impl OcclusionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=4).contains(&self.foliage_density_level) {
            return bad(format!(
                "foliage_density_level must be 1..=4, got {}",
                self.foliage_density_level
            ));
        }
        if !(self.occluders_per_m3_per_level >= 0.0 && self.occluders_per_m3_per_level.is_finite())
        {
            return bad("occluders_per_m3_per_level must be >= 0".into());
        }
        if !(self.occluder_radius_min > 0.0 && self.occluder_radius_min <= self.occluder_radius_max)
        {
            return bad(format!(
                "occluder radius range {}..={} is invalid",
                self.occluder_radius_min, self.occluder_radius_max
            ));
        }
        if !(self.surface_point_density > 0.0 && self.surface_point_density.is_finite()) {
            return bad("surface_point_density must be > 0".into());
        }
        if !(self.point_noise_sigma >= 0.0 && self.point_noise_sigma.is_finite()) {
            return bad("point_noise_sigma must be >= 0".into());
        }
        if !(self.confidence_min > 0.0
            && self.confidence_min <= self.confidence_max
            && self.confidence_max <= 1.0)
        {
            return bad(format!(
                "confidence range {}..={} must lie in (0, 1]",
                self.confidence_min, self.confidence_max
            ));
        }
        if !(self.max_cluster_length > 0.0) {
            return bad("max_cluster_length must be > 0".into());
        }
        if self.min_cluster_points < 2 {
            return bad("min_cluster_points must be >= 2".into());
        }
        if !(self.min_cluster_slenderness >= 0.0 && self.min_cluster_slenderness.is_finite()) {
            return bad("min_cluster_slenderness must be finite and >= 0".into());
        }
        if self.view_azimuths_deg.is_empty()
            || !self.view_azimuths_deg.iter().all(|a| a.is_finite())
        {
            return bad("view_azimuths_deg needs at least one finite angle".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub center: Point3,
    pub radius: f64,
}

impl Occluder {
    pub fn contains(&self, p: &Point3) -> bool {
        (p - self.center).norm_squared() < self.radius * self.radius
    }
}

/// Simulated sensor output for one tree.
#[derive(Debug, Clone)]
pub struct Observation {
    pub clusters: Vec<BranchCluster>,
    /// Per ground-truth vertex: hidden by an occluder and absent from every cluster.
    pub occluded: Vec<bool>,
    pub occluders: Vec<Occluder>,
}

/// Number of occluders for `gt` at the configured density level.
pub fn occluder_count(gt: &SkeletonGraph, params: &OcclusionParams) -> usize {
    let bbox = Aabb::from_points(gt.vertices().iter().map(|v| &v.position));
    let volume = if bbox.is_empty() { 0.0 } else { bbox.volume() };
    (params.occluders_per_m3_per_level * params.foliage_density_level as f64 * volume).round()
        as usize
}

/// Occluder spheres placed uniformly in the canopy bounding box.
pub fn place_occluders(gt: &SkeletonGraph, params: &OcclusionParams) -> Result<Vec<Occluder>> {
    params.validate()?;
    let count = occluder_count(gt, params);
    let bbox = Aabb::from_points(gt.vertices().iter().map(|v| &v.position));
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed ^ 0x6f63_636c_7564_6572);
    let coord = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    Ok((0..count)
        .map(|_| {
            let center = Point3::new(
                coord(&mut rng, bbox.min.x, bbox.max.x),
                coord(&mut rng, bbox.min.y, bbox.max.y),
                coord(&mut rng, bbox.min.z, bbox.max.z),
            );
            let radius = coord(
                &mut rng,
                params.occluder_radius_min,
                params.occluder_radius_max,
            );
            Occluder { center, radius }
        })
        .collect())
}

/// Places occluders from `params` and simulates the observation.
pub fn simulate_observations(gt: &SkeletonGraph, params: &OcclusionParams) -> Result<Observation> {
    let occluders = place_occluders(gt, params)?;
    simulate_with_occluders(gt, params, occluders)
}

/// Maximal paths between vertices of degree other than two, as edge lists
/// `(from, to)` in walking order.
pub fn branch_chains(gt: &SkeletonGraph) -> Vec<Vec<(usize, usize)>> {
    let adj = gt.adjacency();
    let mut seen = std::collections::HashSet::new();
    let mut chains = Vec::new();
    let walk =
        |start: usize, first: usize, seen: &mut std::collections::HashSet<(usize, usize)>| {
            let mut chain = Vec::new();
            let (mut prev, mut cur) = (start, first);
            loop {
                if !seen.insert((prev.min(cur), prev.max(cur))) {
                    break;
                }
                chain.push((prev, cur));
                if adj[cur].len() != 2 {
                    break;
                }
                let next = if adj[cur][0] == prev {
                    adj[cur][1]
                } else {
                    adj[cur][0]
                };
                prev = cur;
                cur = next;
            }
            chain
        };
    for (v, ns) in adj.iter().enumerate() {
        if ns.len() == 2 {
            continue;
        }
        for &n in ns {
            let c = walk(v, n, &mut seen);
            if !c.is_empty() {
                chains.push(c);
            }
        }
    }
    // cycles made only of degree-2 vertices; not produced by the generator
    for (v, ns) in adj.iter().enumerate() {
        for &n in ns {
            let c = walk(v, n, &mut seen);
            if !c.is_empty() {
                chains.push(c);
            }
        }
    }
    chains
}

struct SurfacePoint {
    position: Point3,
    /// Ground-truth vertex the point was generated around.
    source: usize,
}

/// Simulates observing `gt` through the given occluders.
pub fn simulate_with_occluders(
    gt: &SkeletonGraph,
    params: &OcclusionParams,
    occluders: Vec<Occluder>,
) -> Result<Observation> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let verts = gt.vertices();
    let views: Vec<Vector3> = params
        .view_azimuths_deg
        .iter()
        .map(|a| Vector3::new(a.to_radians().cos(), a.to_radians().sin(), 0.0))
        .collect();

    let chains = branch_chains(gt);
    let mut deleted = vec![0usize; verts.len()];
    let mut kept_in_cluster = vec![0usize; verts.len()];

    // surviving points per chain edge
    let mut survivors: Vec<Vec<Vec<SurfacePoint>>> = Vec::with_capacity(chains.len());
    for chain in &chains {
        let mut per_edge = Vec::with_capacity(chain.len());
        for &(u, v) in chain {
            let (a, b) = (verts[u].position, verts[v].position);
            let axis = b - a;
            let len = axis.norm();
            let mut kept = Vec::new();
            if len > 0.0 {
                let r = verts[u].radius.min(verts[v].radius);
                let (e1, e2) = perpendicular(&(axis / len));
                let expected = params.surface_point_density * 2.0 * PI * r * len;
                let mut n = expected.floor() as usize;
                if rng.random::<f64>() < expected.fract() {
                    n += 1;
                }
                for _ in 0..n {
                    let s: f64 = rng.random();
                    let phi = rng.random_range(0.0..2.0 * PI);
                    let normal = e1 * phi.cos() + e2 * phi.sin();
                    if !views.iter().any(|w| normal.dot(w) > 0.0) {
                        continue;
                    }
                    let source = if s < 0.5 { u } else { v };
                    let position = a + axis * s + normal * r;
                    if occluders.iter().any(|o| o.contains(&position)) {
                        deleted[source] += 1;
                    } else {
                        kept.push(SurfacePoint { position, source });
                    }
                }
            }
            per_edge.push(kept);
        }
        survivors.push(per_edge);
    }

    let noise = Normal::new(0.0, params.point_noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
    let limit = NOISE_TRUNCATION * params.point_noise_sigma;
    let mut clusters = Vec::new();
    for (chain, per_edge) in chains.iter().zip(&survivors) {
        for piece in split_runs(
            gt,
            chain,
            per_edge,
            params.max_cluster_length,
            params.min_cluster_slenderness,
        ) {
            let count: usize = piece.iter().map(|&e| per_edge[e].len()).sum();
            if count < params.min_cluster_points {
                continue;
            }

            let mut points = Vec::with_capacity(count);
            for &e in &piece {
                for sp in &per_edge[e] {
                    kept_in_cluster[sp.source] += 1;
                    let offset = if params.point_noise_sigma > 0.0 {
                        loop {
                            let d = Vector3::new(
                                noise.sample(&mut rng),
                                noise.sample(&mut rng),
                                noise.sample(&mut rng),
                            );
                            if d.norm() <= limit {
                                break d;
                            }
                        }
                    } else {
                        Vector3::zeros()
                    };
                    points.push(sp.position + offset);
                }
            }
            let confidence = if params.confidence_max > params.confidence_min {
                rng.random_range(params.confidence_min..=params.confidence_max)
            } else {
                params.confidence_min
            };
            clusters.push(BranchCluster::new(
                points,
                confidence,
                clusters.len() as u64,
                0,
            )?);
        }
    }

    let occluded = (0..verts.len())
        .map(|i| {
            kept_in_cluster[i] == 0
                && (deleted[i] > 0 || occluders.iter().any(|o| o.contains(&verts[i].position)))
        })
        .collect();
    Ok(Observation {
        clusters,
        occluded,
        occluders,
    })
}

/// Splits a chain into runs of edges with surviving points, then cuts each
/// run into near-equal pieces no longer than `max_len`.
///
/// Runs shorter than `slenderness` branch diameters are dropped, and longer
/// ones are never cut into pieces below that length.
fn split_runs(
    gt: &SkeletonGraph,
    chain: &[(usize, usize)],
    per_edge: &[Vec<SurfacePoint>],
    max_len: f64,
    slenderness: f64,
) -> Vec<Vec<usize>> {
    let mut runs: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    for (i, pts) in per_edge.iter().enumerate() {
        if pts.is_empty() {
            if !current.is_empty() {
                runs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(i);
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }

    let mut pieces = Vec::new();
    for run in runs {
        let lengths: Vec<f64> = run.iter().map(|&e| gt.edge_length(chain[e])).collect();
        let total: f64 = lengths.iter().sum();
        let verts = gt.vertices();
        let diameter = run
            .iter()
            .map(|&e| verts[chain[e].0].radius + verts[chain[e].1].radius)
            .fold(0.0, f64::max);
        let min_len = slenderness * diameter;
        if total < min_len {
            continue;
        }
        let mut n = (total / max_len).ceil().max(1.0) as usize;
        if min_len > 0.0 {
            n = n.min((total / min_len).floor().max(1.0) as usize);
        }
        let mut piece = Vec::new();
        let mut acc = 0.0;
        let mut k = 1;
        for (&e, &l) in run.iter().zip(&lengths) {
            piece.push(e);
            acc += l;
            if k < n && acc >= total * k as f64 / n as f64 - 1e-12 {
                pieces.push(std::mem::take(&mut piece));
                k += 1;
            }
        }
        if !piece.is_empty() {
            pieces.push(piece);
        }
    }
    pieces
}
