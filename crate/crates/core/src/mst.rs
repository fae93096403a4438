//! Exact Euclidean minimum spanning tree.
//!
//! Dense Prim over the complete graph, O(n^2) time and O(n) memory. Edges are
//! compared by `(squared length, lo, hi)`, a strict total order, so the tree is
//! unique and equal to what Kruskal would pick with lexicographic tie-breaking.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy)]
struct Key {
    d2: f64,
    lo: usize,
    hi: usize,
}

impl Key {
    fn new(points: &[Point3], u: usize, v: usize) -> Self {
        Key {
            d2: (points[u] - points[v]).norm_squared(),
            lo: u.min(v),
            hi: u.max(v),
        }
    }

    fn cmp(&self, other: &Key) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

/// Minimum spanning tree of the complete Euclidean graph over `points`.
///
/// Returns `n - 1` edges as `(lo, hi)` pairs sorted lexicographically.
pub fn euclidean_mst(points: &[Point3]) -> Result<Vec<(usize, usize)>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyInput("spanning tree over zero points"));
    }
    let mut in_tree = vec![false; n];
    let mut best: Vec<Option<Key>> = vec![None; n];
    let mut edges = Vec::with_capacity(n - 1);

    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut pick: Option<(usize, Key)> = None;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let cand = Key::new(points, current, v);
            let slot = &mut best[v];
            if slot.is_none_or(|b| cand.cmp(&b) == Ordering::Less) {
                *slot = Some(cand);
            }
            let key = slot.expect("just set");
            if pick.is_none_or(|(_, p)| key.cmp(&p) == Ordering::Less) {
                pick = Some((v, key));
            }
        }
        let (v, key) = pick.expect("at least one vertex outside the tree");
        in_tree[v] = true;
        edges.push((key.lo, key.hi));
        current = v;
    }
    edges.sort_unstable();
    Ok(edges)
}
