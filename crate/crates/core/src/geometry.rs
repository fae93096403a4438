//! Geometric primitives and the observation data model.

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// Segments shorter than this are treated as degenerate.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-12;

pub fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// One segmented branch instance: its 3D points and detection confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchCluster {
    points: Vec<Point3>,
    confidence: f64,
    cluster_id: u64,
    view_id: u32,
}

impl BranchCluster {
    pub fn new(
        points: Vec<Point3>,
        confidence: f64,
        cluster_id: u64,
        view_id: u32,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("branch cluster has no points"));
        }
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::InvalidGeometry(format!(
                "cluster {cluster_id}: confidence {confidence} outside (0, 1]"
            )));
        }
        if let Some(p) = points.iter().find(|p| !is_finite(p)) {
            return Err(Error::InvalidGeometry(format!(
                "cluster {cluster_id}: non-finite point {p}"
            )));
        }
        Ok(Self {
            points,
            confidence,
            cluster_id,
            view_id,
        })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn id(&self) -> u64 {
        self.cluster_id
    }

    pub fn view_id(&self) -> u32 {
        self.view_id
    }
}

/// A fitted line segment carrying the confidence and radius of its cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    a: Point3,
    b: Point3,
    confidence: f64,
    radius: f64,
}

impl LineSegment {
    pub fn new(a: Point3, b: Point3, confidence: f64, radius: f64) -> Result<Self> {
        if !is_finite(&a) || !is_finite(&b) {
            return Err(Error::InvalidGeometry("non-finite segment endpoint".into()));
        }
        if (b - a).norm() <= MIN_SEGMENT_LENGTH {
            return Err(Error::InvalidGeometry("zero-length segment".into()));
        }
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::InvalidGeometry(format!(
                "segment confidence {confidence} outside (0, 1]"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "segment radius {radius} must be > 0"
            )));
        }
        Ok(Self {
            a,
            b,
            confidence,
            radius,
        })
    }

    pub fn a(&self) -> Point3 {
        self.a
    }

    pub fn b(&self) -> Point3 {
        self.b
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Unit vector from `a` to `b`.
    pub fn axis(&self) -> Vector3 {
        (self.b - self.a) / self.length()
    }

    /// Axial and radial distance of `p`; see [`point_segment_distances`].
    pub fn distances(&self, p: &Point3) -> (f64, f64) {
        axial_radial(p, &self.a, &self.b)
    }
}

/// Axial and radial distance of `p` from the segment `a`-`b`.
///
/// The radial distance is measured to the infinite carrier line. The axial
/// distance is the overshoot of the projection past the nearest endpoint, and
/// is zero whenever the projection falls within the segment.
pub fn point_segment_distances(p: &Point3, a: &Point3, b: &Point3) -> Result<(f64, f64)> {
    if (b - a).norm() <= MIN_SEGMENT_LENGTH {
        return Err(Error::InvalidGeometry("zero-length segment".into()));
    }
    Ok(axial_radial(p, a, b))
}

fn axial_radial(p: &Point3, a: &Point3, b: &Point3) -> (f64, f64) {
    let ab = b - a;
    let len = ab.norm();
    let axis = ab / len;
    let ap = p - a;
    let t = ap.dot(&axis);
    let axial = ((t - 0.5 * len).abs() - 0.5 * len).max(0.0);
    let radial = (ap - axis * t).norm();
    (axial, radial)
}

/// Euclidean distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Three connected line segments through four control points.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentChain {
    control_points: [Point3; 4],
    segments: [LineSegment; 3],
    radius: f64,
    confidence: f64,
}

impl SegmentChain {
    pub fn new(control_points: [Point3; 4], radius: f64, confidence: f64) -> Result<Self> {
        let seg = |i: usize| {
            LineSegment::new(control_points[i], control_points[i + 1], confidence, radius)
        };
        let segments = [seg(0)?, seg(1)?, seg(2)?];
        Ok(Self {
            control_points,
            segments,
            radius,
            confidence,
        })
    }

    pub fn control_points(&self) -> &[Point3; 4] {
        &self.control_points
    }

    pub fn segments(&self) -> &[LineSegment; 3] {
        &self.segments
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(LineSegment::length).sum()
    }

    /// Distance from `p` to the polyline.
    pub fn distance(&self, p: &Point3) -> f64 {
        self.segments
            .iter()
            .map(|s| point_segment_distance(p, &s.a, &s.b))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut bb = Self::empty();
        for p in points {
            bb.insert(p);
        }
        bb
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn insert(&mut self, p: &Point3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        let v = Vector3::repeat(pad);
        Aabb {
            min: self.min - v,
            max: self.max + v,
        }
    }

    pub fn extent(&self) -> Vector3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}
