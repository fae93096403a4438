//! Sparse skeleton-occupancy likelihood grid.
//!
//! Every fitted segment contributes an observed probability that equals the
//! cluster confidence on the segment and falls off linearly in the normalised
//! ellipsoidal distance `sqrt((d_axial/l)^2 + (d_radial/r)^2)`, reaching zero
//! at `k`. Contributions are fused per voxel as independent evidence,
//! `p <- 1 - (1 - p)(1 - p_o)`.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, LineSegment, Point3, SegmentChain, Vector3};

pub type VoxelIndex = [i32; 3];

/// Probabilities below this are not stored.
pub const STORE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EllipsoidKernelConfig {
    /// Support size in units of segment length (axially) and radius (radially).
    pub k: f64,
}

impl Default for EllipsoidKernelConfig {
    fn default() -> Self {
        Self { k: 3.0 }
    }
}

impl EllipsoidKernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k > 0.0 && self.k.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "kernel k must be > 0, got {}",
                self.k
            )))
        }
    }
}

/// Placement and resolution of the voxel lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Point3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Point3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::Config(format!(
                "voxel size must be > 0, got {voxel_size}"
            )));
        }
        if dims.iter().any(|&d| d == 0 || d > i32::MAX as usize) {
            return Err(Error::Config(format!(
                "grid dims must be >= 1, got {dims:?}"
            )));
        }
        if !crate::geometry::is_finite(&origin) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
        })
    }

    /// Smallest grid covering every chain together with its kernel support.
    pub fn enclosing(
        chains: &[SegmentChain],
        kernel: &EllipsoidKernelConfig,
        voxel_size: f64,
    ) -> Result<Self> {
        let mut bb = Aabb::empty();
        for chain in chains {
            let pad = chain
                .segments()
                .iter()
                .map(|s| (kernel.k * s.length()).max(kernel.k * s.radius()))
                .fold(0.0, f64::max);
            let cb = Aabb::from_points(chain.control_points()).padded(pad);
            bb = bb.union(&cb);
        }
        if bb.is_empty() {
            return Err(Error::EmptyInput("no chains to bound the grid"));
        }
        let ext = bb.extent();
        let dims = [0, 1, 2].map(|i| ((ext[i] / voxel_size).ceil() as usize).max(1));
        Self::new(bb.min, voxel_size, dims)
    }

    pub fn contains(&self, idx: &VoxelIndex) -> bool {
        (0..3).all(|i| idx[i] >= 0 && (idx[i] as usize) < self.dims[i])
    }

    /// Lattice coordinates of `p`, ignoring the grid bounds.
    fn lattice(&self, p: &Point3) -> [i64; 3] {
        let g = (p - self.origin) / self.voxel_size;
        [g.x.floor() as i64, g.y.floor() as i64, g.z.floor() as i64]
    }

    fn bounded(&self, l: [i64; 3]) -> Option<VoxelIndex> {
        let in_range = (0..3).all(|i| l[i] >= 0 && (l[i] as u64) < self.dims[i] as u64);
        in_range.then(|| [l[0] as i32, l[1] as i32, l[2] as i32])
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn index_of(&self, p: &Point3) -> Option<VoxelIndex> {
        if !crate::geometry::is_finite(p) {
            return None;
        }
        self.bounded(self.lattice(p))
    }

    pub fn center(&self, idx: &VoxelIndex) -> Point3 {
        let h = self.voxel_size;
        self.origin
            + Vector3::new(
                (idx[0] as f64 + 0.5) * h,
                (idx[1] as f64 + 0.5) * h,
                (idx[2] as f64 + 0.5) * h,
            )
    }

    /// In-bounds voxels pierced by the segment `a`-`b`, in traversal order.
    ///
    /// 3D digital differential analyser over the lattice.
    pub fn traverse(&self, a: &Point3, b: &Point3) -> Vec<VoxelIndex> {
        let h = self.voxel_size;
        let ga = (a - self.origin) / h;
        let gb = (b - self.origin) / h;
        let mut cell = self.lattice(a);
        let end = self.lattice(b);
        let dir = gb - ga;

        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for i in 0..3 {
            if dir[i] > 0.0 {
                step[i] = 1;
                t_max[i] = ((cell[i] + 1) as f64 - ga[i]) / dir[i];
                t_delta[i] = 1.0 / dir[i];
            } else if dir[i] < 0.0 {
                step[i] = -1;
                t_max[i] = (cell[i] as f64 - ga[i]) / dir[i];
                t_delta[i] = -1.0 / dir[i];
            }
        }

        let budget: i64 = (0..3).map(|i| (end[i] - cell[i]).abs()).sum::<i64>() + 1;
        let mut out = Vec::with_capacity(budget as usize);
        for _ in 0..budget {
            if let Some(v) = self.bounded(cell) {
                out.push(v);
            }
            if cell == end {
                break;
            }
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[axis] > 1.0 {
                break;
            }
            cell[axis] += step[axis];
            t_max[axis] += t_delta[axis];
        }
        out
    }
}

/// Probability that observing `seg` assigns to a voxel centred at `p`.
pub fn observed_prob(seg: &LineSegment, p: &Point3, cfg: &EllipsoidKernelConfig) -> f64 {
    let (da, dr) = seg.distances(p);
    kernel_value(
        seg.confidence(),
        cfg.k,
        da / seg.length(),
        dr / seg.radius(),
    )
}

/// `max(0, c - (c/k) * sqrt(a^2 + r^2))` for normalised distances `a`, `r`.
pub fn kernel_value(c: f64, k: f64, axial_norm: f64, radial_norm: f64) -> f64 {
    (c - c / k * axial_norm.hypot(radial_norm)).max(0.0)
}

/// Independent-evidence fusion: `1 - (1 - prior)(1 - obs)`.
///
/// Evaluated as `prior + obs - prior * obs`, which is symmetric in its
/// arguments and exact for a zero prior; certainty is absorbing.
pub fn fuse(prior: f64, obs: f64) -> f64 {
    if prior >= 1.0 || obs >= 1.0 {
        return 1.0;
    }
    (prior + obs - prior * obs).clamp(0.0, 1.0)
}

/// Voxel contributions of a single segment.
///
/// Every voxel centre inside the support ellipsoid gets its kernel value;
/// voxels the segment passes through get the full confidence.
pub fn segment_contributions(
    spec: &GridSpec,
    seg: &LineSegment,
    cfg: &EllipsoidKernelConfig,
) -> Vec<(VoxelIndex, f64)> {
    let axis = seg.axis();
    let reach = cfg.k * seg.length();
    let lo_end = seg.a() - axis * reach;
    let hi_end = seg.b() + axis * reach;
    let bb = Aabb::from_points([&lo_end, &hi_end]).padded(cfg.k * seg.radius());

    let lo = spec.lattice(&bb.min).map(|v| v.max(0));
    let hi = spec.lattice(&bb.max);
    let hi = [0, 1, 2].map(|i| hi[i].min(spec.dims[i] as i64 - 1));

    let mut out: HashMap<VoxelIndex, f64> = HashMap::new();
    for x in lo[0]..=hi[0] {
        for y in lo[1]..=hi[1] {
            for z in lo[2]..=hi[2] {
                let idx = [x as i32, y as i32, z as i32];
                let p = observed_prob(seg, &spec.center(&idx), cfg);
                if p >= STORE_EPS {
                    out.insert(idx, p);
                }
            }
        }
    }
    for idx in spec.traverse(&seg.a(), &seg.b()) {
        out.insert(idx, seg.confidence());
    }
    let mut v: Vec<_> = out.into_iter().collect();
    v.sort_unstable_by_key(|e| e.0);
    v
}

/// Contributions of the three segments of `chain`, one list per segment.
pub fn chain_contributions(
    spec: &GridSpec,
    chain: &SegmentChain,
    cfg: &EllipsoidKernelConfig,
) -> Vec<Vec<(VoxelIndex, f64)>> {
    chain
        .segments()
        .iter()
        .map(|s| segment_contributions(spec, s, cfg))
        .collect()
}

/// Sparse grid of skeleton-occupancy probabilities. Absent voxels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodGrid {
    spec: GridSpec,
    cells: HashMap<VoxelIndex, f64>,
}

impl LikelihoodGrid {
    pub fn new(spec: GridSpec) -> Self {
        Self {
            spec,
            cells: HashMap::new(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn get(&self, idx: &VoxelIndex) -> f64 {
        self.cells.get(idx).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Stored cells sorted by voxel index.
    pub fn sorted_cells(&self) -> Vec<(VoxelIndex, f64)> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, p)| (*k, *p)).collect();
        v.sort_unstable_by_key(|e| e.0);
        v
    }

    /// Sets a cell directly, as when loading a grid dump.
    pub fn set(&mut self, idx: VoxelIndex, p: f64) -> Result<()> {
        if !self.spec.contains(&idx) {
            return Err(Error::InvalidGeometry(format!(
                "voxel {idx:?} outside grid"
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidGeometry(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        if p >= STORE_EPS {
            self.cells.insert(idx, p);
        } else {
            self.cells.remove(&idx);
        }
        Ok(())
    }

    pub fn fuse_at(&mut self, idx: VoxelIndex, p_obs: f64) {
        if p_obs < STORE_EPS || !self.spec.contains(&idx) {
            return;
        }
        let slot = self.cells.entry(idx).or_insert(0.0);
        *slot = fuse(*slot, p_obs);
    }

    fn fuse_contributions(&mut self, contribs: &[Vec<(VoxelIndex, f64)>]) {
        for seg in contribs {
            for &(idx, p) in seg {
                self.fuse_at(idx, p);
            }
        }
    }

    /// Rasterises one chain and fuses its evidence, segment by segment.
    pub fn apply_observation(&mut self, chain: &SegmentChain, cfg: &EllipsoidKernelConfig) {
        let contribs = chain_contributions(&self.spec, chain, cfg);
        self.fuse_contributions(&contribs);
    }

    /// Applies every chain. Rasterisation runs in parallel; fusion is applied
    /// in input order.
    pub fn accumulate(&mut self, chains: &[SegmentChain], cfg: &EllipsoidKernelConfig) {
        let spec = self.spec;
        let contribs: Vec<_> = chains
            .par_iter()
            .map(|c| chain_contributions(&spec, c, cfg))
            .collect();
        for c in &contribs {
            self.fuse_contributions(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(c: f64) -> LineSegment {
        LineSegment::new(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            c,
            0.1,
        )
        .unwrap()
    }

    fn straight_chain(a: Point3, b: Point3, c: f64, r: f64) -> SegmentChain {
        let cps = std::array::from_fn(|i| a + (b - a) * (i as f64 / 3.0));
        SegmentChain::new(cps, r, c).unwrap()
    }

    fn spec() -> GridSpec {
        GridSpec::new(Point3::new(-1.0, -1.0, -1.0), 0.1, [30, 20, 20]).unwrap()
    }

    #[test]
    fn kernel_center_equals_confidence() {
        let s = seg(0.88);
        let p = observed_prob(
            &s,
            &Point3::new(0.5, 0.0, 0.0),
            &EllipsoidKernelConfig::default(),
        );
        assert_eq!(p, 0.88);
    }

    #[test]
    fn kernel_vanishes_on_support_boundary() {
        let s = seg(0.7);
        // d_axial / l = k
        let p = observed_prob(
            &s,
            &Point3::new(4.0, 0.0, 0.0),
            &EllipsoidKernelConfig::default(),
        );
        assert_eq!(p, 0.0);
        let p = observed_prob(
            &s,
            &Point3::new(-3.0, 0.0, 0.0),
            &EllipsoidKernelConfig::default(),
        );
        assert_eq!(p, 0.0);
    }

    #[test]
    fn kernel_diagonal_value() {
        // d_axial = l, d_radial = r: 0.88 - 0.88/3 * sqrt(2)
        let s = seg(0.88);
        let p = observed_prob(
            &s,
            &Point3::new(2.0, 0.1, 0.0),
            &EllipsoidKernelConfig::default(),
        );
        let expect = 0.88 - 0.88 / 3.0 * 2f64.sqrt();
        assert!((p - expect).abs() < 1e-12);
        assert!((p - 0.4651).abs() < 1e-4);
    }

    #[test]
    fn fuse_identities() {
        for x in [0.0, 0.1, 0.5, 0.99, 1.0] {
            assert_eq!(fuse(0.0, x), x);
            assert_eq!(fuse(x, 1.0), 1.0);
        }
        assert_eq!(fuse(0.5, 0.5), 0.75);
    }

    #[test]
    fn traversal_visits_contiguous_cells() {
        let s = spec();
        let a = Point3::new(-0.95, -0.93, -0.91);
        let b = Point3::new(1.7, 0.6, 0.55);
        let cells = s.traverse(&a, &b);
        assert_eq!(cells.first(), s.index_of(&a).as_ref());
        assert_eq!(cells.last(), s.index_of(&b).as_ref());
        for w in cells.windows(2) {
            let manhattan: i32 = (0..3).map(|i| (w[0][i] - w[1][i]).abs()).sum();
            assert_eq!(manhattan, 1);
        }
        // every densely sampled point on the segment lies in a visited cell
        for i in 0..=10_000 {
            let p = a + (b - a) * (i as f64 / 10_000.0);
            let idx = s.index_of(&p).unwrap();
            assert!(cells.contains(&idx), "{p} not covered");
        }
    }

    #[test]
    fn traversal_clips_to_bounds() {
        let s = spec();
        let cells = s.traverse(
            &Point3::new(-5.0, 0.05, 0.05),
            &Point3::new(5.0, 0.05, 0.05),
        );
        assert_eq!(cells.len(), 30);
    }

    #[test]
    fn chain_outside_grid_is_noop() {
        let mut g = LikelihoodGrid::new(spec());
        let c = straight_chain(
            Point3::new(50.0, 50.0, 50.0),
            Point3::new(51.0, 50.0, 50.0),
            0.9,
            0.05,
        );
        g.apply_observation(&c, &EllipsoidKernelConfig::default());
        assert!(g.is_empty());
    }

    #[test]
    fn full_confidence_segment_saturates_its_voxels() {
        let mut g = LikelihoodGrid::new(spec());
        let a = Point3::new(-0.52, 0.03, 0.07);
        let b = Point3::new(0.61, 0.03, 0.07);
        let c = straight_chain(a, b, 1.0, 0.05);
        g.apply_observation(&c, &EllipsoidKernelConfig::default());
        for idx in g.spec().traverse(&a, &b) {
            assert_eq!(g.get(&idx), 1.0);
        }
    }

    #[test]
    fn repeated_observation_fuses() {
        let mut g = LikelihoodGrid::new(spec());
        let a = Point3::new(-0.52, 0.03, 0.07);
        let b = Point3::new(0.61, 0.03, 0.07);
        // single segment chains, so on-segment voxels see one contribution each
        let one = |g: &mut LikelihoodGrid| {
            let seg = LineSegment::new(a, b, 0.5, 0.05).unwrap();
            let contrib = segment_contributions(g.spec(), &seg, &EllipsoidKernelConfig::default());
            for (idx, p) in contrib {
                g.fuse_at(idx, p);
            }
        };
        one(&mut g);
        one(&mut g);
        let mid = g.spec().index_of(&Point3::new(0.0, 0.03, 0.07)).unwrap();
        assert!((g.get(&mid) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn crossing_segments_reinforce() {
        let cfg = EllipsoidKernelConfig::default();
        let s = spec();
        let c1 = straight_chain(
            Point3::new(-0.6, 0.0, 0.0),
            Point3::new(0.6, 0.0, 0.0),
            0.6,
            0.1,
        );
        let c2 = straight_chain(
            Point3::new(0.0, -0.6, 0.0),
            Point3::new(0.0, 0.6, 0.0),
            0.6,
            0.1,
        );
        let mut g1 = LikelihoodGrid::new(s);
        g1.apply_observation(&c1, &cfg);
        let mut g2 = LikelihoodGrid::new(s);
        g2.apply_observation(&c2, &cfg);
        let mut both = LikelihoodGrid::new(s);
        both.accumulate(&[c1, c2], &cfg);
        let mut jointly = 0;
        for (idx, p) in both.sorted_cells() {
            let (a, b) = (g1.get(&idx), g2.get(&idx));
            if a > 0.0 && b > 0.0 && a < 1.0 && b < 1.0 {
                assert!(p > a && p > b);
                jointly += 1;
            }
        }
        assert!(jointly > 0);
    }

    #[test]
    fn untouched_voxels_stay_absent() {
        let cfg = EllipsoidKernelConfig::default();
        let mut g = LikelihoodGrid::new(spec());
        let c = straight_chain(
            Point3::new(-0.3, 0.0, 0.0),
            Point3::new(0.3, 0.0, 0.0),
            0.8,
            0.05,
        );
        g.apply_observation(&c, &cfg);
        for (idx, _) in g.sorted_cells() {
            let center = g.spec().center(&idx);
            let inside = c
                .segments()
                .iter()
                .any(|s| observed_prob(s, &center, &cfg) > 0.0)
                || c.segments()
                    .iter()
                    .any(|s| g.spec().traverse(&s.a(), &s.b()).contains(&idx));
            assert!(inside);
        }
    }

    #[test]
    fn enclosing_grid_covers_support() {
        let cfg = EllipsoidKernelConfig::default();
        let c = straight_chain(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.3, 0.0, 0.0),
            0.8,
            0.02,
        );
        let s = GridSpec::enclosing(std::slice::from_ref(&c), &cfg, 0.02).unwrap();
        // axial reach is 3 * 0.1 beyond each end
        assert!(s.origin.x <= -0.3 + 1e-12);
        assert!(s.origin.x + s.dims[0] as f64 * 0.02 >= 0.6 - 1e-12);
        assert!(GridSpec::enclosing(&[], &cfg, 0.02).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fuse_algebra(a in 0.0..=1.0f64, b in 0.0..=1.0f64, c in 0.0..=1.0f64, d in 0.0..=1.0f64) {
                let ab = fuse(a, b);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert!((ab - fuse(b, a)).abs() < 1e-15);
                prop_assert!((fuse(ab, c) - fuse(a, fuse(b, c))).abs() < 1e-15);
                if c >= b {
                    prop_assert!(fuse(a, c) >= fuse(a, b) - 1e-15);
                }
                prop_assert!(fuse(a, d) >= a - 1e-15);
            }

            #[test]
            fn larger_k_never_shrinks_kernel(
                x in -3.0..4.0f64, y in -0.5..0.5f64, k1 in 0.5..6.0f64, dk in 0.0..3.0f64, c in 0.01..=1.0f64,
            ) {
                let s = seg(c);
                let p = Point3::new(x, y, 0.0);
                let lo = observed_prob(&s, &p, &EllipsoidKernelConfig { k: k1 });
                let hi = observed_prob(&s, &p, &EllipsoidKernelConfig { k: k1 + dk });
                prop_assert!(hi >= lo);
                prop_assert!(hi <= c);
            }
        }
    }
}
