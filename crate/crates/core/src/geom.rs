//! Planar geometry shared by every module: points, poses, polylines,
//! oriented boxes, and rigid frame transforms.
//!
//! All planning math runs in the ego frame at t=0: +x forward, +y left,
//! origin at the ego reference point. Angles are radians in (-pi, pi].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2D point or vector, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2 { x, y }
    }
}

impl From<Point2> for (f64, f64) {
    fn from(p: Point2) -> Self {
        (p.x, p.y)
    }
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Counterclockwise rotation by `angle` radians.
    pub fn rotated(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Wraps an angle into the principal range (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r -= std::f64::consts::TAU;
    }
    r
}

/// Position plus heading in the principal range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Point2,
    pub heading: f64,
}

impl Pose2 {
    /// Builds a pose, wrapping the heading into (-pi, pi].
    pub fn new(position: Point2, heading: f64) -> Self {
        Pose2 {
            position,
            heading: normalize_angle(heading),
        }
    }
}

/// World point into the frame anchored at `ego` (+x along ego heading).
pub fn to_ego_frame(p: Point2, ego: Pose2) -> Point2 {
    (p - ego.position).rotated(-ego.heading)
}

/// Inverse of [`to_ego_frame`].
pub fn from_ego_frame(p: Point2, ego: Pose2) -> Point2 {
    p.rotated(ego.heading) + ego.position
}

/// Rotates a direction/velocity vector into the ego frame (no translation).
pub fn vec_to_ego_frame(v: Point2, ego: Pose2) -> Point2 {
    v.rotated(-ego.heading)
}

/// Ordered vertex chain with positive arclength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct Polyline {
    points: Vec<Point2>,
}

impl TryFrom<Vec<(f64, f64)>> for Polyline {
    type Error = Error;
    fn try_from(raw: Vec<(f64, f64)>) -> Result<Self> {
        Polyline::new(raw.into_iter().map(Point2::from).collect())
    }
}

impl From<Polyline> for Vec<(f64, f64)> {
    fn from(line: Polyline) -> Self {
        line.points.into_iter().map(Into::into).collect()
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestPoint {
    pub foot: Point2,
    pub distance: f64,
    pub segment: usize,
}

impl Polyline {
    /// Validates >= 2 vertices with consecutive points distinct.
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Geometry(format!(
                "polyline needs >= 2 points, got {}",
                points.len()
            )));
        }
        for (i, pair) in points.windows(2).enumerate() {
            if !pair[0].is_finite() || !pair[1].is_finite() {
                return Err(Error::Geometry(format!("non-finite vertex near index {i}")));
            }
            if pair[0] == pair[1] {
                return Err(Error::Geometry(format!(
                    "duplicate consecutive vertices at index {i}"
                )));
            }
        }
        Ok(Polyline { points })
    }

    /// Caller guarantees validity (e.g. a rigid transform of a valid line).
    pub(crate) fn new_unchecked(points: Vec<Point2>) -> Self {
        debug_assert!(points.len() >= 2);
        Polyline { points }
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        *self.points.last().expect("polyline has >= 2 points")
    }

    pub fn arclength(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    /// Cumulative arclength at each vertex, starting at 0.
    pub fn cumulative_arclength(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.points.windows(2) {
            acc += w[0].dist(w[1]);
            out.push(acc);
        }
        out
    }

    /// Point at arclength `s` from the start, clamped to the endpoints.
    pub fn point_at_arclength(&self, s: f64) -> Point2 {
        if s <= 0.0 {
            return self.first();
        }
        let cum = self.cumulative_arclength();
        let total = *cum.last().expect("nonempty");
        if s >= total {
            return self.last();
        }
        // Walk to the segment containing s.
        for i in 0..self.points.len() - 1 {
            if s <= cum[i + 1] {
                let seg_len = cum[i + 1] - cum[i];
                let t = (s - cum[i]) / seg_len;
                return self.points[i] + (self.points[i + 1] - self.points[i]) * t;
            }
        }
        self.last()
    }

    /// Segment-projected closest point. Ties go to the earliest segment.
    pub fn nearest_point(&self, p: Point2) -> NearestPoint {
        let mut best = NearestPoint {
            foot: self.points[0],
            distance: f64::INFINITY,
            segment: 0,
        };
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let len2 = ab.dot(ab);
            if len2 == 0.0 {
                continue; // degenerate segment skipped
            }
            let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
            let foot = a + ab * t;
            let d = p.dist(foot);
            if d < best.distance {
                best = NearestPoint {
                    foot,
                    distance: d,
                    segment: i,
                };
            }
        }
        best
    }

    /// Index of the vertex closest to `p`; ties broken by lowest index.
    pub fn nearest_vertex(&self, p: Point2) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, v) in self.points.iter().enumerate() {
            let d = v.dist(p);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Applies a pointwise map, assuming it preserves vertex distinctness.
    pub fn transformed(&self, f: impl Fn(Point2) -> Point2) -> Polyline {
        Polyline::new_unchecked(self.points.iter().map(|&p| f(p)).collect())
    }
}

/// Rectangle footprint with orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Point2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Point2, heading: f64, length: f64, width: f64) -> Result<Self> {
        if !(length >= width && width > 0.0) {
            return Err(Error::Geometry(format!(
                "oriented box needs length >= width > 0, got {length} x {width}"
            )));
        }
        Ok(OrientedBox {
            center,
            heading,
            length,
            width,
        })
    }

    /// Corner points in counterclockwise order.
    pub fn corners(&self) -> [Point2; 4] {
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let local = [
            Point2::new(hl, hw),
            Point2::new(-hl, hw),
            Point2::new(-hl, -hw),
            Point2::new(hl, -hw),
        ];
        local.map(|p| p.rotated(self.heading) + self.center)
    }
}

/// Separating-axis rectangle intersection; touching boxes count as overlapping.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = [
        Point2::new(a.heading.cos(), a.heading.sin()),
        Point2::new(-a.heading.sin(), a.heading.cos()),
        Point2::new(b.heading.cos(), b.heading.sin()),
        Point2::new(-b.heading.sin(), b.heading.cos()),
    ];
    for axis in axes {
        let proj = |cs: &[Point2; 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in cs {
                let v = c.dot(axis);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let (alo, ahi) = proj(&ca);
        let (blo, bhi) = proj(&cb);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// Max |y| over ego-frame points: how far the motion swings sideways.
pub fn lateral_displacement(points: &[Point2]) -> f64 {
    points.iter().map(|p| p.y.abs()).fold(0.0, f64::max)
}
