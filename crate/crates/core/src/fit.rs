//! Cluster-to-chain fitting.
//!
//! Each branch cluster is summarised by a clamped degree-one B-spline with
//! four control points (three connected line segments) and a radius taken
//! from the spread of the points along their second principal axis.
//!
//! The least-squares fit starts from chord-length parameters over the points
//! ordered along the first principal axis, is compared against the plain
//! principal-axis line, and the better of the two is refined by damped
//! Gauss-Newton on the point-to-polyline distances. Refinement only accepts
//! steps that lower the sum of squared distances, so the result is never worse
//! than the best straight line.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BranchCluster, Point3, SegmentChain, Vector3};

const REFINE_MAX_ITERS: usize = 200;
const REFINE_TOL: f64 = 1e-15;
const POLISH_MAX_ITERS: usize = 30;
const POLISH_MAX_SHIFT: f64 = 1e-3;
const REGION_MARGIN: f64 = 0.05;
const TUBE_RESIDUAL_RATIO: f64 = 0.5;
const SPLIT_GRID: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Clusters with fewer points are fitted with a single line cut in three.
    pub min_points_full_fit: usize,
    /// Radius used when the cluster is too thin for a principal-axis estimate.
    /// The pipeline sets this to the voxel size.
    #[serde(skip)]
    pub fallback_radius: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            min_points_full_fit: 8,
            fallback_radius: 0.02,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_points_full_fit < 4 {
            return Err(Error::Config(format!(
                "min_points_full_fit must be >= 4, got {}",
                self.min_points_full_fit
            )));
        }
        if !(self.fallback_radius > 0.0 && self.fallback_radius.is_finite()) {
            return Err(Error::Config("fallback_radius must be > 0".into()));
        }
        Ok(())
    }
}

/// Principal axes of a point set, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct Pca {
    pub centroid: Point3,
    pub eigenvalues: [f64; 3],
    pub axes: [Vector3; 3],
}

pub fn pca(points: &[Point3]) -> Pca {
    let n = points.len() as f64;
    let centroid = Point3::from(points.iter().map(|p| p.coords).sum::<Vector3>() / n);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let axis = |i: usize| eig.eigenvectors.column(order[i]).into_owned();
    Pca {
        centroid,
        eigenvalues: order.map(|i| eig.eigenvalues[i].max(0.0)),
        axes: [axis(0), axis(1), axis(2)],
    }
}

/// Flips `axis` so that the first point with a non-negligible projection lies
/// on its negative side. Depends only on the data, so it commutes with rigid
/// motions of the input.
fn orient_axis(axis: Vector3, points: &[Point3], centroid: &Point3, scale: f64) -> Vector3 {
    let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
    for p in points {
        let s = (p - centroid).dot(&axis);
        if s.abs() > tol {
            return if s < 0.0 { axis } else { -axis };
        }
    }
    axis
}

/// Half the extent of the cluster along its second principal axis.
pub fn estimate_radius(cluster: &BranchCluster) -> Result<f64> {
    radius_of_points(cluster.points())
}

pub(crate) fn radius_of_points(points: &[Point3]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::DegenerateCluster(format!(
            "radius estimate needs at least 3 points, got {}",
            points.len()
        )));
    }
    let pca = pca(points);
    let [l1, l2, _] = pca.eigenvalues;
    if l1 <= 0.0 || l2 <= 1e-12 * l1 {
        return Err(Error::DegenerateCluster("points are collinear".into()));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let s = (p - pca.centroid).dot(&pca.axes[1]);
            (lo.min(s), hi.max(s))
        });
    let radius = 0.5 * (hi - lo);
    if radius > 0.0 {
        Ok(radius)
    } else {
        Err(Error::DegenerateCluster(
            "zero spread on second axis".into(),
        ))
    }
}

/// Fits a three-segment chain to `cluster`.
pub fn fit_chain(cluster: &BranchCluster, cfg: &FitConfig) -> Result<SegmentChain> {
    let points = cluster.points();
    if points.len() < 2 {
        return Err(Error::DegenerateCluster(format!(
            "cluster {} has {} point(s), need at least 2",
            cluster.id(),
            points.len()
        )));
    }
    let pca = pca(points);
    let scale = pca.eigenvalues[0].sqrt();
    if scale <= 1e-12 {
        return Err(Error::DegenerateCluster(format!(
            "cluster {} has zero extent",
            cluster.id()
        )));
    }
    let axis = orient_axis(pca.axes[0], points, &pca.centroid, scale);

    let estimated = estimate_radius(cluster).ok();
    let line = line_control_points(points, &pca.centroid, &axis);
    let cps = if points.len() < cfg.min_points_full_fit {
        line
    } else {
        let region = Region::new(points, &pca.centroid, &axis);
        fit_control_points(points, &pca.centroid, &axis, line, &region, estimated)
    };
    let cps = orient_chain(cps, &pca.centroid, &axis);

    let radius = estimated.unwrap_or(cfg.fallback_radius);
    SegmentChain::new(cps, radius, cluster.confidence())
        .or_else(|_| SegmentChain::new(line, radius, cluster.confidence()))
}

fn orient_chain(mut cps: [Point3; 4], centroid: &Point3, axis: &Vector3) -> [Point3; 4] {
    let s0 = (cps[0] - centroid).dot(axis);
    let s3 = (cps[3] - centroid).dot(axis);
    if s0 > s3 {
        cps.reverse();
    }
    cps
}

/// Principal-axis line over the projected extent, cut into thirds.
fn line_control_points(points: &[Point3], centroid: &Point3, axis: &Vector3) -> [Point3; 4] {
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let s = (p - centroid).dot(axis);
            (lo.min(s), hi.max(s))
        });
    std::array::from_fn(|i| centroid + axis * (lo + (hi - lo) * i as f64 / 3.0))
}

/// Where control points may go: ordered along the principal axis, inside a
/// capped cylinder around it that encloses the data with a small margin.
///
/// Without this, a free polyline lowers its residual on thick clusters by
/// zigzagging through the cloud with control points far outside it.
struct Region {
    centroid: Point3,
    axis: Vector3,
    lo: f64,
    hi: f64,
    radius: f64,
}

impl Region {
    fn new(points: &[Point3], centroid: &Point3, axis: &Vector3) -> Self {
        let (mut lo, mut hi, mut radius) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        for p in points {
            let d = p - centroid;
            let s = d.dot(axis);
            lo = lo.min(s);
            hi = hi.max(s);
            radius = radius.max((d - axis * s).norm());
        }
        let pad = REGION_MARGIN * (hi - lo);
        Self {
            centroid: *centroid,
            axis: *axis,
            lo: lo - pad,
            hi: hi + pad,
            radius: radius + pad,
        }
    }

    fn admits(&self, cps: &[Point3; 4]) -> bool {
        let mut prev = f64::NEG_INFINITY;
        cps.iter().all(|c| {
            let d = c - self.centroid;
            let s = d.dot(&self.axis);
            let ok = s >= prev
                && s >= self.lo
                && s <= self.hi
                && (d - self.axis * s).norm() <= self.radius;
            prev = s;
            ok
        })
    }
}

fn fit_control_points(
    points: &[Point3],
    centroid: &Point3,
    axis: &Vector3,
    line: [Point3; 4],
    region: &Region,
    radius: Option<f64>,
) -> [Point3; 4] {
    let mut best = line;
    let mut best_res = polyline_residual(points, &line);

    if let Some(cps) =
        solve_control_points(points, &chord_length_parameters(points, centroid, axis))
    {
        let res = polyline_residual(points, &cps);
        if res < best_res && region.admits(&cps) {
            best = cps;
            best_res = res;
        }
    }
    // Surface points of a thick tube sit a radius away from any centreline;
    // freeing the foot points there only trades the axis for a zigzag.
    let rms = (best_res / points.len() as f64).sqrt();
    if radius.is_some_and(|r| rms >= TUBE_RESIDUAL_RATIO * r) {
        return best;
    }

    if let Some(cps) = segmented_control_points(points, centroid, axis) {
        let res = polyline_residual(points, &cps);
        if res < best_res && region.admits(&cps) {
            best = cps;
            best_res = res;
        }
    }

    let refined = refine(points, best, best_res, region);
    let polished = polish(points, refined, region);
    let trimmed = trim_ends(points, polished);
    if region.admits(&trimmed) {
        trimmed
    } else {
        polished
    }
}

/// Moves each end control point along its segment to the outermost point
/// projected onto that segment.
///
/// The distance objective is flat in the tangential position of the free
/// ends, so this pins them to the data. It never increases the residual.
fn trim_ends(points: &[Point3], mut cps: [Point3; 4]) -> [Point3; 4] {
    for (seg, end, inner) in [(0usize, 0usize, 1usize), (2, 3, 2)] {
        let dir = cps[end] - cps[inner];
        let len = dir.norm();
        if len <= 0.0 {
            continue;
        }
        let dir = dir / len;
        let reach = points
            .iter()
            .filter(|p| foot_point(p, &cps).segment == seg)
            .map(|p| (p - cps[inner]).dot(&dir))
            .fold(f64::NEG_INFINITY, f64::max);
        if reach.is_finite() && reach > 1e-9 * len {
            cps[end] = cps[inner] + dir * reach;
        }
    }
    cps
}

/// Damped Gauss-Newton on the point-to-polyline distances.
///
/// Residuals of points whose foot lies strictly inside a segment are projected
/// onto the segment's normal plane; points clamped to a vertex keep the full
/// offset. Steps are only accepted when the residual drops.
fn refine(points: &[Point3], mut cps: [Point3; 4], mut res: f64, region: &Region) -> [Point3; 4] {
    let mut damping = 1e-3;
    for _ in 0..REFINE_MAX_ITERS {
        if res <= 0.0 {
            break;
        }
        let mut jtj = SMatrix::<f64, 12, 12>::zeros();
        let mut jtr = SVector::<f64, 12>::zeros();
        for p in points {
            let foot = foot_point(p, &cps);
            let offset = p - foot.point;
            let proj = if foot.interior {
                Matrix3::identity() - foot.tangent * foot.tangent.transpose()
            } else {
                Matrix3::identity()
            };
            let w = [(foot.segment, 1.0 - foot.u), (foot.segment + 1, foot.u)];
            let r = proj * offset;
            for &(a, wa) in &w {
                for &(b, wb) in &w {
                    let mut blk = jtj.fixed_view_mut::<3, 3>(3 * a, 3 * b);
                    blk += proj * (wa * wb);
                }
                let mut seg = jtr.fixed_view_mut::<3, 1>(3 * a, 0);
                seg += r * wa;
            }
        }
        let scale = jtj.trace() / 12.0;
        let mut improved = false;
        for _ in 0..20 {
            let mut lhs = jtj;
            for i in 0..12 {
                lhs[(i, i)] += damping * scale.max(f64::MIN_POSITIVE);
            }
            let Some(chol) = lhs.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let step = chol.solve(&jtr);
            let cand: [Point3; 4] = std::array::from_fn(|i| cps[i] + step.fixed_rows::<3>(3 * i));
            let cand_res = if region.admits(&cand) {
                polyline_residual(points, &cand)
            } else {
                f64::INFINITY
            };
            if cand_res < res {
                let moved = step.amax();
                cps = cand;
                let gain = res - cand_res;
                res = cand_res;
                damping = (damping * 0.1).max(1e-12);
                improved = moved > REFINE_TOL && gain > REFINE_TOL * REFINE_TOL;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    cps
}

/// Undamped Gauss-Newton with every point's foot frozen to its current
/// segment or vertex.
///
/// With the assignment fixed the objective is smooth, so this converges to
/// machine precision where the damped pass stalls on a kink.
fn polish(points: &[Point3], cps: [Point3; 4], region: &Region) -> [Point3; 4] {
    enum Anchor {
        Line(usize),
        Vertex(usize),
    }
    let anchors: Vec<Anchor> = points
        .iter()
        .map(|p| {
            let f = foot_point(p, &cps);
            if f.interior {
                Anchor::Line(f.segment)
            } else if f.u < 0.5 {
                Anchor::Vertex(f.segment)
            } else {
                Anchor::Vertex(f.segment + 1)
            }
        })
        .collect();
    let start = polyline_residual(points, &cps);
    let mut cur = cps;
    for _ in 0..POLISH_MAX_ITERS {
        let mut jtj = SMatrix::<f64, 12, 12>::zeros();
        let mut jtr = SVector::<f64, 12>::zeros();
        for (p, anchor) in points.iter().zip(&anchors) {
            match *anchor {
                Anchor::Vertex(k) => {
                    let r = p - cur[k];
                    let mut blk = jtj.fixed_view_mut::<3, 3>(3 * k, 3 * k);
                    blk += Matrix3::identity();
                    let mut g = jtr.fixed_view_mut::<3, 1>(3 * k, 0);
                    g += r;
                }
                Anchor::Line(i) => {
                    let (a, b) = (cur[i], cur[i + 1]);
                    let e = b - a;
                    let l2 = e.norm_squared();
                    if l2 <= 0.0 {
                        return cps;
                    }
                    let q = p - a;
                    let s = q.dot(&e) / l2;
                    let r = q - e * s;
                    let w = q - e * (2.0 * s);
                    let ja = e * (e + w).transpose() / l2 - Matrix3::identity() * (1.0 - s);
                    let jb = -(e * w.transpose()) / l2 - Matrix3::identity() * s;
                    let blocks = [(i, ja), (i + 1, jb)];
                    for &(u, ju) in &blocks {
                        for &(v, jv) in &blocks {
                            let mut blk = jtj.fixed_view_mut::<3, 3>(3 * u, 3 * v);
                            blk += ju.transpose() * jv;
                        }
                        let mut g = jtr.fixed_view_mut::<3, 1>(3 * u, 0);
                        g -= ju.transpose() * r;
                    }
                }
            }
        }
        let ridge = 1e-12 * (jtj.trace() / 12.0).max(f64::MIN_POSITIVE);
        for i in 0..12 {
            jtj[(i, i)] += ridge;
        }
        let Some(chol) = jtj.cholesky() else {
            break;
        };
        let step = chol.solve(&jtr);
        if !step.iter().all(|x| x.is_finite()) {
            break;
        }
        cur = std::array::from_fn(|i| cur[i] + step.fixed_rows::<3>(3 * i));
        if step.amax() <= REFINE_TOL {
            break;
        }
    }
    let moved = cur
        .iter()
        .zip(&cps)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let extent = (cps[3] - cps[0]).norm().max(f64::MIN_POSITIVE);
    if moved < POLISH_MAX_SHIFT * extent
        && region.admits(&cur)
        && polyline_residual(points, &cur) <= start * (1.0 + 1e-9)
    {
        cur
    } else {
        cps
    }
}

/// Three lines fitted to contiguous runs of the points sorted along `axis`,
/// joined where adjacent lines pass closest. Run boundaries are tried on a
/// grid of quantiles; the lowest residual wins.
fn segmented_control_points(
    points: &[Point3],
    centroid: &Point3,
    axis: &Vector3,
) -> Option<[Point3; 4]> {
    let n = points.len();
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        (a - centroid)
            .dot(axis)
            .total_cmp(&(b - centroid).dot(axis))
    });
    let mut cuts: Vec<usize> = (1..SPLIT_GRID).map(|q| n * q / SPLIT_GRID).collect();
    cuts.dedup();

    let line = |run: &[Point3]| {
        let p = pca(run);
        (p.centroid, p.axes[0])
    };
    let mut best: Option<([Point3; 4], f64)> = None;
    for (a, &i) in cuts.iter().enumerate() {
        for &j in &cuts[a + 1..] {
            if i < 2 || j - i < 2 || n - j < 2 {
                continue;
            }
            let lines = [line(&sorted[..i]), line(&sorted[i..j]), line(&sorted[j..])];
            let knot = |k: usize, boundary: &Point3| {
                closest_between(lines[k], lines[k + 1]).unwrap_or(*boundary)
            };
            let project = |(c, d): (Point3, Vector3), p: &Point3| c + d * (p - c).dot(&d);
            let cps = [
                project(lines[0], &sorted[0]),
                knot(0, &sorted[i]),
                knot(1, &sorted[j]),
                project(lines[2], &sorted[n - 1]),
            ];
            if !cps.iter().all(crate::geometry::is_finite) {
                continue;
            }
            let res = polyline_residual(points, &cps);
            if best.is_none_or(|(_, r)| res < r) {
                best = Some((cps, res));
            }
        }
    }
    best.map(|(cps, _)| cps)
}

/// Midpoint of the closest points of two lines, `None` when near parallel.
fn closest_between((p, u): (Point3, Vector3), (q, v): (Point3, Vector3)) -> Option<Point3> {
    let w = p - q;
    let b = u.dot(&v);
    let denom = 1.0 - b * b;
    if denom < 1e-9 {
        return None;
    }
    let (d, e) = (u.dot(&w), v.dot(&w));
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    Some(Point3::from(
        ((p + u * s).coords + (q + v * t).coords) / 2.0,
    ))
}

/// Normalised cumulative chord length over the points sorted along `axis`.
fn chord_length_parameters(points: &[Point3], centroid: &Point3, axis: &Vector3) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    let proj: Vec<f64> = points.iter().map(|p| (p - centroid).dot(axis)).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let mut params = vec![0.0; points.len()];
    let mut acc = 0.0;
    for w in order.windows(2) {
        acc += (points[w[1]] - points[w[0]]).norm();
        params[w[1]] = acc;
    }
    if acc > 0.0 {
        for t in &mut params {
            *t /= acc;
        }
    }
    params
}

/// Knot span and local coordinate for the clamped uniform knot vector
/// `{0, 0, 1/3, 2/3, 1, 1}`.
fn span(t: f64) -> (usize, f64) {
    let x = 3.0 * t.clamp(0.0, 1.0);
    let i = (x.floor() as usize).min(2);
    (i, x - i as f64)
}

fn solve_control_points(points: &[Point3], params: &[f64]) -> Option<[Point3; 4]> {
    let mut normal = Matrix4::<f64>::zeros();
    let mut rhs = [Vector4::<f64>::zeros(); 3];
    for (p, &t) in points.iter().zip(params) {
        let (i, u) = span(t);
        let w = [(i, 1.0 - u), (i + 1, u)];
        for &(r, wr) in &w {
            for &(c, wc) in &w {
                normal[(r, c)] += wr * wc;
            }
            for d in 0..3 {
                rhs[d][r] += wr * p[d];
            }
        }
    }
    let chol = normal.cholesky()?;
    let sol = rhs.map(|b| chol.solve(&b));
    let cps = std::array::from_fn(|i| Point3::new(sol[0][i], sol[1][i], sol[2][i]));
    cps.iter().all(crate::geometry::is_finite).then_some(cps)
}

struct Foot {
    segment: usize,
    u: f64,
    point: Point3,
    tangent: Vector3,
    interior: bool,
    dist2: f64,
}

/// Closest point on the polyline through `cps`.
fn foot_point(p: &Point3, cps: &[Point3; 4]) -> Foot {
    let mut best: Option<Foot> = None;
    for i in 0..3 {
        let ab = cps[i + 1] - cps[i];
        let len2 = ab.norm_squared();
        let raw = if len2 > 0.0 {
            (p - cps[i]).dot(&ab) / len2
        } else {
            0.0
        };
        let u = raw.clamp(0.0, 1.0);
        let point = cps[i] + ab * u;
        let dist2 = (p - point).norm_squared();
        if best.as_ref().is_none_or(|b| dist2 < b.dist2) {
            let tangent = if len2 > 0.0 {
                ab / len2.sqrt()
            } else {
                Vector3::zeros()
            };
            best = Some(Foot {
                segment: i,
                u,
                point,
                tangent,
                interior: len2 > 0.0 && raw > 0.0 && raw < 1.0,
                dist2,
            });
        }
    }
    best.expect("three segments")
}

/// Sum of squared distances from `points` to the polyline through `cps`.
pub fn polyline_residual(points: &[Point3], cps: &[Point3; 4]) -> f64 {
    points.iter().map(|p| foot_point(p, cps).dist2).sum()
}

/// Sum of squared distances from `points` to their best-fit straight line.
pub fn line_residual(points: &[Point3]) -> f64 {
    let pca = pca(points);
    points
        .iter()
        .map(|p| {
            let d = p - pca.centroid;
            let along = d.dot(&pca.axes[0]);
            (d - pca.axes[0] * along).norm_squared()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cluster(points: Vec<Point3>) -> BranchCluster {
        BranchCluster::new(points, 0.88, 1, 0).unwrap()
    }

    fn sample_polyline(vertices: &[Point3; 4], per_segment: usize) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..3 {
            for j in 0..per_segment {
                let t = j as f64 / per_segment as f64;
                pts.push(vertices[i] + (vertices[i + 1] - vertices[i]) * t);
            }
        }
        pts.push(vertices[3]);
        pts
    }

    #[test]
    fn too_few_points_is_an_error() {
        let c = cluster(vec![Point3::origin()]);
        assert!(matches!(
            fit_chain(&c, &FitConfig::default()),
            Err(Error::DegenerateCluster(_))
        ));
    }

    #[test]
    fn coincident_points_are_an_error() {
        let c = cluster(vec![Point3::new(1.0, 1.0, 1.0); 20]);
        assert!(matches!(
            fit_chain(&c, &FitConfig::default()),
            Err(Error::DegenerateCluster(_))
        ));
    }

    #[test]
    fn straight_line_gives_collinear_control_points() {
        let pts: Vec<Point3> = (0..=50)
            .map(|i| Point3::new(0.02 * i as f64, 0.0, 0.0))
            .collect();
        let chain = fit_chain(&cluster(pts.clone()), &FitConfig::default()).unwrap();
        let cps = chain.control_points();
        assert!((cps[0] - Point3::origin()).norm() < 1e-9);
        assert!((cps[3] - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
        for cp in cps {
            assert!(cp.y.abs() < 1e-12 && cp.z.abs() < 1e-12);
        }
        assert!(polyline_residual(&pts, cps).sqrt() < 1e-9);
        // collinear points: radius falls back
        assert_eq!(chain.radius(), FitConfig::default().fallback_radius);
    }

    #[test]
    fn recovers_exact_polyline() {
        let truth = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.3, 0.05, 0.0),
            Point3::new(0.5, 0.2, 0.1),
            Point3::new(0.6, 0.45, 0.1),
        ];
        let pts = sample_polyline(&truth, 12);
        let chain = fit_chain(&cluster(pts), &FitConfig::default()).unwrap();
        for (a, b) in chain.control_points().iter().zip(&truth) {
            assert!((a - b).norm() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn sparse_cluster_uses_line_fallback() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.1, 0.01, 0.0),
            Point3::new(0.2, 0.0, 0.0),
            Point3::new(0.3, 0.01, 0.0),
        ];
        let chain = fit_chain(&cluster(pts), &FitConfig::default()).unwrap();
        let cps = chain.control_points();
        let d = cps[3] - cps[0];
        for i in 1..3 {
            let expect = cps[0] + d * (i as f64 / 3.0);
            assert!((cps[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn first_control_point_has_smaller_pc1_projection() {
        let mut pts: Vec<Point3> = (0..=40)
            .map(|i| Point3::new(0.0, 0.0, 0.01 * i as f64))
            .collect();
        pts.reverse();
        let chain = fit_chain(&cluster(pts.clone()), &FitConfig::default()).unwrap();
        let p = pca(&pts);
        let axis = orient_axis(p.axes[0], &pts, &p.centroid, p.eigenvalues[0].sqrt());
        let s0 = (chain.control_points()[0] - p.centroid).dot(&axis);
        let s3 = (chain.control_points()[3] - p.centroid).dot(&axis);
        assert!(s0 < s3);
    }

    #[test]
    fn curved_cluster_tracks_curve() {
        // dense quarter-arc cluster with thickness, like a bent branch
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..600)
            .map(|_| {
                let a: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
                let r = 0.5 + rng.random_range(-0.01..0.01);
                Point3::new(r * a.cos(), r * a.sin(), rng.random_range(-0.01..0.01))
            })
            .collect();
        let chain = fit_chain(&cluster(pts.clone()), &FitConfig::default()).unwrap();
        let rms = (polyline_residual(&pts, chain.control_points()) / pts.len() as f64).sqrt();
        assert!(rms < 0.02, "rms {rms}");
        assert!(polyline_residual(&pts, chain.control_points()) <= line_residual(&pts));
        // interior control points pushed outward from the chord
        let chord_mid = Point3::from(
            (chain.control_points()[0].coords + chain.control_points()[3].coords) / 2.0,
        );
        assert!(chain.control_points()[1].coords.norm() > chord_mid.coords.norm());
    }

    #[test]
    fn radius_of_flat_rectangle() {
        let mut pts = Vec::new();
        for i in 0..=100 {
            for j in 0..=4 {
                pts.push(Point3::new(0.01 * i as f64, -0.01 + 0.005 * j as f64, 0.0));
            }
        }
        let r = estimate_radius(&cluster(pts)).unwrap();
        assert!((r - 0.01).abs() < 1e-12, "{r}");
    }

    #[test]
    fn radius_of_cylinder_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3> = (0..5000)
            .map(|_| {
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                Point3::new(0.05 * a.cos(), 0.05 * a.sin(), rng.random_range(0.0..1.0))
            })
            .collect();
        let r = estimate_radius(&cluster(pts)).unwrap();
        assert!((0.045..=0.055).contains(&r), "{r}");
    }

    #[test]
    fn radius_of_collinear_points_is_an_error() {
        let pts = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ];
        assert!(estimate_radius(&cluster(pts)).is_err());
        let two = vec![Point3::origin(), Point3::new(1.0, 1.0, 0.0)];
        assert!(estimate_radius(&cluster(two)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig {
            min_points_full_fit: 3,
            ..FitConfig::default()
        }
        .validate()
        .is_err());
        assert!(FitConfig::default().validate().is_ok());
    }

    mod props {
        use super::{
            cluster, estimate_radius, fit_chain, line_residual, polyline_residual, FitConfig,
        };
        use crate::geometry::{Point3, Vector3};
        use nalgebra::{Rotation3, Unit};
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn noisy_branch(seed: u64) -> Vec<Point3> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| {
                    let t: f64 = rng.random_range(0.0..1.0);
                    Point3::new(
                        0.4 * t,
                        0.1 * (3.0 * t).sin() + rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                    )
                })
                .collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn rigid_motion_equivariance(
                seed in 0u64..1000,
                ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in -1.0..1.0f64,
                angle in 0.0..6.2f64,
                tx in -5.0..5.0f64, ty in -5.0..5.0f64, tz in -5.0..5.0f64,
            ) {
                let axis = Vector3::new(ax, ay, az);
                prop_assume!(axis.norm() > 0.1);
                let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
                let t = Vector3::new(tx, ty, tz);
                let pts = noisy_branch(seed);
                let moved: Vec<Point3> = pts.iter().map(|p| rot * p + t).collect();
                let cfg = FitConfig::default();
                let a = fit_chain(&cluster(pts.clone()), &cfg).unwrap();
                let b = fit_chain(&cluster(moved.clone()), &cfg).unwrap();
                for (pa, pb) in a.control_points().iter().zip(b.control_points()) {
                    prop_assert!(((rot * pa + t) - pb).norm() < 1e-9);
                }
                let ra = estimate_radius(&cluster(pts)).unwrap();
                let rb = estimate_radius(&cluster(moved)).unwrap();
                prop_assert!((ra - rb).abs() < 1e-9);
            }

            #[test]
            fn never_worse_than_best_line(seed in 0u64..1000) {
                let pts = noisy_branch(seed);
                let chain = fit_chain(&cluster(pts.clone()), &FitConfig::default()).unwrap();
                prop_assert!(polyline_residual(&pts, chain.control_points()) <= line_residual(&pts) * (1.0 + 1e-12));
            }

            #[test]
            fn radius_invariant_under_reordering(seed in 0u64..1000, shift in 1usize..199) {
                let pts = noisy_branch(seed);
                let mut rotated = pts.clone();
                rotated.rotate_left(shift);
                let a = estimate_radius(&cluster(pts)).unwrap();
                let b = estimate_radius(&cluster(rotated)).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
