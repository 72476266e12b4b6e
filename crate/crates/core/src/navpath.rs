//! Navigation-route handling: fixed-spacing interpolation, window selection
//! around the ego, vector-level node features, and the coarse-route noise
//! model used by the scenario generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{Point2, Polyline};

/// Default spacing between interpolated route points, meters.
pub const ROUTE_SPACING_M: f64 = 5.0;

/// Default number of window nodes (window points = nodes + 1).
pub const WINDOW_NODES: usize = 10;

/// Contiguous slice of the interpolated route starting at the vertex nearest
/// the ego, with `nodes() + 1` points.
#[derive(Debug, Clone, PartialEq)]
pub struct NavWindow {
    points: Vec<Point2>,
    /// True when the route ran out and the tail was linearly extrapolated.
    pub padded: bool,
}

impl NavWindow {
    /// Builds a window from explicit points (at least two, all finite).
    pub fn new(points: Vec<Point2>, padded: bool) -> Result<NavWindow> {
        if points.len() < 2 {
            return Err(Error::Empty("window points"));
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("window points"));
        }
        Ok(NavWindow { points, padded })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn nodes(&self) -> usize {
        self.points.len() - 1
    }

    /// Applies a pointwise transform (e.g. world to ego frame).
    pub fn transformed(&self, f: impl Fn(Point2) -> Point2) -> NavWindow {
        NavWindow {
            points: self.points.iter().map(|&p| f(p)).collect(),
            padded: self.padded,
        }
    }
}

/// One route segment as a direction-only feature node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavNode {
    /// Position vector to the next window point.
    pub d: Point2,
    pub cos_h: f64,
    pub sin_h: f64,
}

impl NavNode {
    /// Segment heading, radians in (-pi, pi].
    pub fn heading(&self) -> f64 {
        self.sin_h.atan2(self.cos_h)
    }

    /// Encoder input row: [dx, dy, cos h, sin h].
    pub fn features(&self) -> [f64; 4] {
        [self.d.x, self.d.y, self.cos_h, self.sin_h]
    }
}

/// Width of [`NavNode::features`].
pub const NAV_NODE_WIDTH: usize = 4;

/// Resamples a route at arclength multiples of `spacing` from its first
/// vertex; the trailing partial segment is dropped.
pub fn interpolate_route(route: &Polyline, spacing: f64) -> Result<Polyline> {
    if spacing <= 0.0 {
        return Err(Error::Config(format!("spacing must be > 0, got {spacing}")));
    }
    let cum = route.cumulative_arclength();
    let total = *cum.last().expect("polyline nonempty");
    if total < spacing {
        return Err(Error::RouteTooShort {
            arclength: total,
            spacing,
        });
    }
    let steps = ((total / spacing) + 1e-9).floor() as usize;
    let pts = route.points();
    let mut out = Vec::with_capacity(steps + 1);
    let mut seg = 0usize;
    for i in 0..=steps {
        let s = (i as f64 * spacing).min(total);
        while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = ((s - cum[seg]) / seg_len).clamp(0.0, 1.0);
        out.push(pts[seg] + (pts[seg + 1] - pts[seg]) * t);
    }
    Polyline::new(out)
}

/// Takes the route vertex nearest `ego_pos` (lowest index on ties) plus the
/// next `m` vertices; a missing tail is extrapolated along the last segment
/// and flagged.
pub fn select_window(route: &Polyline, ego_pos: Point2, m: usize) -> Result<NavWindow> {
    if m < 1 {
        return Err(Error::Config("window needs m >= 1 nodes".into()));
    }
    let pts = route.points();
    let start = route.nearest_vertex(ego_pos);
    let mut points: Vec<Point2> = pts[start..pts.len().min(start + m + 1)].to_vec();
    let padded = points.len() < m + 1;
    if padded {
        let dir = if points.len() >= 2 {
            points[points.len() - 1] - points[points.len() - 2]
        } else {
            // Window starts at the final vertex: continue the route's last segment.
            pts[pts.len() - 1] - pts[pts.len() - 2]
        };
        let anchor = *points.last().expect("window start exists");
        let missing = m + 1 - points.len();
        for j in 1..=missing {
            points.push(anchor + dir * j as f64);
        }
    }
    Ok(NavWindow { points, padded })
}

/// Converts window points to per-segment nodes: d_i to the next point plus
/// the unit direction as cos/sin of the segment heading.
pub fn vectorize_window(window: &NavWindow) -> Result<Vec<NavNode>> {
    let pts = window.points();
    let mut nodes = Vec::with_capacity(pts.len() - 1);
    for i in 0..pts.len() - 1 {
        let d = pts[i + 1] - pts[i];
        if d.x == 0.0 && d.y == 0.0 {
            return Err(Error::DuplicateNavVertices(i));
        }
        let h = d.y.atan2(d.x);
        nodes.push(NavNode {
            d,
            cos_h: h.cos(),
            sin_h: h.sin(),
        });
    }
    Ok(nodes)
}

/// Ego position expressed in the window's local frame: origin at the first
/// window point, x axis along the first segment. Keeps the route-to-ego
/// offset visible even though the ego sits at the origin of its own frame.
pub fn ego_in_window_frame(window: &NavWindow, ego_pos: Point2) -> Point2 {
    let pts = window.points();
    let first_seg = pts[1] - pts[0];
    let h0 = first_seg.y.atan2(first_seg.x);
    (ego_pos - pts[0]).rotated(-h0)
}

/// Displaces each vertex by Gaussian along-track/lateral noise in the local
/// segment frame. Deterministic per seed; zero sigmas return the input.
pub fn perturb_route(
    route: &Polyline,
    lateral_sigma: f64,
    along_sigma: f64,
    seed: u64,
) -> Result<Polyline> {
    if lateral_sigma < 0.0 || along_sigma < 0.0 {
        return Err(Error::Config("noise sigmas must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let along = Normal::new(0.0, along_sigma).expect("sigma >= 0");
    let lateral = Normal::new(0.0, lateral_sigma).expect("sigma >= 0");
    let pts = route.points();
    let mut out = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        // Local direction: outgoing segment, or incoming for the last vertex.
        let (a, b) = if i + 1 < pts.len() {
            (pts[i], pts[i + 1])
        } else {
            (pts[i - 1], pts[i])
        };
        let dir = b - a;
        let norm = dir.norm();
        let unit = Point2::new(dir.x / norm, dir.y / norm);
        let perp = Point2::new(-unit.y, unit.x);
        let da = along.sample(&mut rng);
        let dl = lateral.sample(&mut rng);
        out.push(pts[i] + unit * da + perp * dl);
    }
    Polyline::new(out)
}
