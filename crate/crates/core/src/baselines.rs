//! Comparison joiners: a plain Euclidean MST over every vertex, and a
//! breakpoint-connection rule that links fragment endpoints by distance and
//! growth direction.

use crate::error::{Error, Result};
use crate::geometry::Vector3;
use crate::graph::{SkeletonGraph, SkeletonVertex, UnionFind};
use crate::mst::euclidean_mst;
use crate::skeleton::EDGE_LENGTH_SLACK;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtsemConfig {
    /// Largest endpoint-to-endpoint gap that may be connected (m).
    pub max_connect_distance: f64,
    /// Largest angle between an endpoint's direction and the connector (degrees).
    pub max_angle_deg: f64,
    /// Number of vertices, endpoint included, averaged for the endpoint direction.
    pub endpoint_direction_window: usize,
}

impl Default for FtsemConfig {
    fn default() -> Self {
        Self {
            max_connect_distance: 0.10,
            max_angle_deg: 30.0,
            endpoint_direction_window: 5,
        }
    }
}

impl FtsemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_connect_distance > 0.0 && self.max_connect_distance.is_finite()) {
            return Err(Error::Config(format!(
                "ftsem max_connect_distance must be > 0, got {}",
                self.max_connect_distance
            )));
        }
        if !(self.max_angle_deg > 0.0 && self.max_angle_deg < 180.0) {
            return Err(Error::Config(format!(
                "ftsem max_angle_deg must be in (0, 180), got {}",
                self.max_angle_deg
            )));
        }
        if self.endpoint_direction_window < 2 {
            return Err(Error::Config(
                "ftsem endpoint_direction_window must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Euclidean MST over all vertices, without edge removal.
pub fn mst_baseline(vertices: &[SkeletonVertex]) -> Result<SkeletonGraph> {
    if vertices.is_empty() {
        return Err(Error::EmptyInput("mst baseline over zero vertices"));
    }
    let positions: Vec<_> = vertices.iter().map(|v| v.position).collect();
    let edges = euclidean_mst(&positions)?;
    SkeletonGraph::from_parts(vertices.to_vec(), &edges)
}

/// Flags vertices incident to an edge longer than `voxel_size`.
///
/// Initial fragments never contain such edges, so for the baselines these are
/// exactly the vertices on a bridge between fragments.
pub fn bridge_vertices(graph: &SkeletonGraph, voxel_size: f64) -> Vec<bool> {
    let mut flags = vec![false; graph.vertex_count()];
    let limit = voxel_size * (1.0 + EDGE_LENGTH_SLACK);
    for &(u, v) in graph.edges() {
        if graph.edge_length((u, v)) > limit {
            flags[u] = true;
            flags[v] = true;
        }
    }
    flags
}

/// One accepted breakpoint connection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connection {
    pub u: usize,
    pub v: usize,
    pub distance: f64,
    /// Angle at `u` between its outgoing direction and `v - u` (degrees).
    pub angle_u: f64,
    /// Angle at `v` between its outgoing direction and `u - v` (degrees).
    pub angle_v: f64,
}

#[derive(Debug, Clone)]
pub struct FtsemOutcome {
    pub graph: SkeletonGraph,
    pub connections: Vec<Connection>,
}

/// Outgoing unit direction of every degree-1 vertex.
///
/// Walks inward from the endpoint over at most `window` vertices, stopping at
/// a fork, and averages the unit edge vectors pointing out of the fragment.
pub fn endpoint_directions(graph: &SkeletonGraph, window: usize) -> Vec<Option<Vector3>> {
    let adj = graph.adjacency();
    let verts = graph.vertices();
    let mut out = vec![None; verts.len()];
    for (e, slot) in out.iter_mut().enumerate() {
        if adj[e].len() != 1 {
            continue;
        }
        let mut sum = Vector3::zeros();
        let (mut prev, mut cur) = (e, adj[e][0]);
        for _ in 1..window {
            let d = verts[prev].position - verts[cur].position;
            let n = d.norm();
            if n > 0.0 {
                sum += d / n;
            }
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
        let n = sum.norm();
        if n > 0.0 {
            *slot = Some(sum / n);
        }
    }
    out
}

fn angle_deg(a: &Vector3, b: &Vector3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Connects fragment endpoints of `initial` with straight edges.
///
/// Every pair of degree-1 vertices in different fragments is a candidate if
/// their distance and both direction angles are within the thresholds.
/// Candidates are taken in ascending distance order; each endpoint is used at
/// most once and no edge may close a cycle.
pub fn ftsem_baseline(initial: &SkeletonGraph, cfg: &FtsemConfig) -> Result<FtsemOutcome> {
    cfg.validate()?;
    if !initial.is_acyclic() {
        return Err(Error::Invariant("ftsem input must be a forest".into()));
    }
    let labels = initial.component_labels();
    let dirs = endpoint_directions(initial, cfg.endpoint_direction_window);
    let verts = initial.vertices();
    let ends: Vec<usize> = (0..verts.len()).filter(|&i| dirs[i].is_some()).collect();

    let mut candidates = Vec::new();
    for (i, &u) in ends.iter().enumerate() {
        for &v in &ends[i + 1..] {
            if labels[u] == labels[v] {
                continue;
            }
            let uv = verts[v].position - verts[u].position;
            let distance = uv.norm();
            if distance > cfg.max_connect_distance || distance == 0.0 {
                continue;
            }
            let angle_u = angle_deg(&dirs[u].expect("endpoint"), &uv);
            let angle_v = angle_deg(&dirs[v].expect("endpoint"), &-uv);
            if angle_u <= cfg.max_angle_deg && angle_v <= cfg.max_angle_deg {
                candidates.push(Connection {
                    u,
                    v,
                    distance,
                    angle_u,
                    angle_v,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then((a.u, a.v).cmp(&(b.u, b.v)))
    });

    let mut graph = initial.clone();
    let mut uf = UnionFind::new(verts.len());
    for &(u, v) in initial.edges() {
        uf.union(u, v);
    }
    let mut used = vec![false; verts.len()];
    let mut connections = Vec::new();
    for c in candidates {
        if used[c.u] || used[c.v] || !uf.union(c.u, c.v) {
            continue;
        }
        used[c.u] = true;
        used[c.v] = true;
        graph.add_edge(c.u, c.v)?;
        connections.push(c);
    }
    Ok(FtsemOutcome { graph, connections })
}

/// Re-derives every connection from `initial` and checks it against the
/// thresholds, the endpoint rule and acyclicity.
pub fn audit_ftsem(
    initial: &SkeletonGraph,
    outcome: &FtsemOutcome,
    cfg: &FtsemConfig,
) -> Result<()> {
    let fail = |msg: String| Err(Error::Invariant(msg));
    let dirs = endpoint_directions(initial, cfg.endpoint_direction_window);
    let labels = initial.component_labels();
    let verts = initial.vertices();
    if outcome.graph.edge_count() != initial.edge_count() + outcome.connections.len() {
        return fail("edge count does not match accepted connections".into());
    }
    for c in &outcome.connections {
        let (Some(du), Some(dv)) = (dirs[c.u], dirs[c.v]) else {
            return fail(format!("connection ({}, {}) uses a non-endpoint", c.u, c.v));
        };
        if labels[c.u] == labels[c.v] {
            return fail(format!("connection ({}, {}) within one fragment", c.u, c.v));
        }
        let uv = verts[c.v].position - verts[c.u].position;
        if uv.norm() > cfg.max_connect_distance {
            return fail(format!(
                "connection ({}, {}) exceeds the distance limit",
                c.u, c.v
            ));
        }
        if angle_deg(&du, &uv) > cfg.max_angle_deg || angle_deg(&dv, &-uv) > cfg.max_angle_deg {
            return fail(format!(
                "connection ({}, {}) exceeds the angle limit",
                c.u, c.v
            ));
        }
        if !outcome.graph.has_edge(c.u, c.v) {
            return fail(format!("connection ({}, {}) missing from graph", c.u, c.v));
        }
    }
    if !outcome.graph.is_acyclic() {
        return fail("ftsem output has a cycle".into());
    }
    if outcome.graph.component_count() > initial.component_count() {
        return fail("ftsem output has more components than its input".into());
    }
    Ok(())
}
