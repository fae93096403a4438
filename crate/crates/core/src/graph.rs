//! Skeleton graph: vertices with radius and provenance, undirected edges.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Where a skeleton vertex came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Sampled from an observed branch segment.
    Observed,
    /// Voxel centre on a minimum-cost path through the likelihood grid.
    PathDerived,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonVertex {
    pub position: Point3,
    pub radius: f64,
    pub provenance: Provenance,
}

impl SkeletonVertex {
    pub fn observed(position: Point3, radius: f64) -> Self {
        Self {
            position,
            radius,
            provenance: Provenance::Observed,
        }
    }

    pub fn path_derived(position: Point3, radius: f64) -> Self {
        Self {
            position,
            radius,
            provenance: Provenance::PathDerived,
        }
    }
}

/// Undirected simple graph over skeleton vertices.
///
/// Edges are stored as `(lo, hi)` with `lo < hi`; self-loops and duplicates
/// are rejected on insertion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkeletonGraph {
    vertices: Vec<SkeletonVertex>,
    edges: Vec<(usize, usize)>,
    edge_set: BTreeSet<(usize, usize)>,
}

impl SkeletonGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_vertices(vertices: Vec<SkeletonVertex>) -> Self {
        Self {
            vertices,
            ..Self::default()
        }
    }

    pub fn from_parts(vertices: Vec<SkeletonVertex>, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::from_vertices(vertices);
        for &(u, v) in edges {
            g.add_edge(u, v)?;
        }
        Ok(g)
    }

    pub fn vertices(&self) -> &[SkeletonVertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn add_vertex(&mut self, v: SkeletonVertex) -> usize {
        self.vertices.push(v);
        self.vertices.len() - 1
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        let n = self.vertices.len();
        if u >= n || v >= n {
            return Err(Error::InvalidGeometry(format!(
                "edge ({u}, {v}) references a vertex outside 0..{n}"
            )));
        }
        if u == v {
            return Err(Error::InvalidGeometry(format!("self-loop on vertex {u}")));
        }
        let key = (u.min(v), u.max(v));
        if !self.edge_set.insert(key) {
            return Err(Error::InvalidGeometry(format!("duplicate edge ({u}, {v})")));
        }
        self.edges.push(key);
        Ok(())
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_set.contains(&(u.min(v), u.max(v)))
    }

    pub fn edge_length(&self, (u, v): (usize, usize)) -> f64 {
        (self.vertices[u].position - self.vertices[v].position).norm()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Component label per vertex. Labels are dense, ordered by smallest
    /// member index.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.vertices.len());
        for &(u, v) in &self.edges {
            uf.union(u, v);
        }
        let mut label = vec![usize::MAX; self.vertices.len()];
        let mut root_label = vec![usize::MAX; self.vertices.len()];
        let mut next = 0;
        for (i, l) in label.iter_mut().enumerate() {
            let r = uf.find(i);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            *l = root_label[r];
        }
        label
    }

    pub fn component_count(&self) -> usize {
        self.component_labels()
            .into_iter()
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Vertex indices grouped by component, in label order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let labels = self.component_labels();
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut out = vec![Vec::new(); count];
        for (i, l) in labels.into_iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// True when the graph is a forest.
    pub fn is_acyclic(&self) -> bool {
        let mut uf = UnionFind::new(self.vertices.len());
        self.edges.iter().all(|&(u, v)| uf.union(u, v))
    }

    pub fn total_edge_length(&self) -> f64 {
        self.edges.iter().map(|&e| self.edge_length(e)).sum()
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}
