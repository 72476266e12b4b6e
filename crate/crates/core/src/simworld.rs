//! Synthetic scenario generator: parameterized road layouts (straight, left
//! turn, right turn, intersection), lane-following agents with constant-speed
//! futures, a constant-speed ego ground truth, and a noisy coarse route
//! standing in for a navigation provider. Fully deterministic per seed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{lateral_displacement, to_ego_frame, Point2, Polyline, Pose2};
use crate::navpath::{interpolate_route, perturb_route, ROUTE_SPACING_M};
use crate::scene::{
    write_scenes_jsonl, AgentCategory, AgentTrack, EgoState, MapElement, MapKind, ScenarioKind,
    Scene, SceneMeta, TRAJ_DT,
};

/// Lane width, meters.
pub const LANE_WIDTH_M: f64 = 3.5;
/// Road half width (two lanes per direction), meters.
pub const ROAD_HALFWIDTH_M: f64 = 7.0;
/// Turn-scenario radius range, meters.
pub const TURN_RADIUS_RANGE_M: (f64, f64) = (15.0, 30.0);
/// Intersection connector radius range, meters.
pub const CONNECTOR_RADIUS_RANGE_M: (f64, f64) = (10.0, 15.0);
/// Signed lateral offset of the ego lane center from the road spine, meters.
pub const EGO_LANE_OFFSET_M: f64 = -0.5 * LANE_WIDTH_M;
/// Future steps generated per scene.
pub const DEFAULT_HORIZON: usize = 6;
/// Minimum ego-to-agent center distance at t=0, meters.
pub const MIN_AGENT_SPAWN_DIST_M: f64 = 8.0;
/// Lateral-displacement threshold for the turning subset, meters.
pub const TURNING_THRESHOLD_M: f64 = 2.0;

const SIGNED_LANE_OFFSETS: [f64; 4] = [-1.75, -5.25, 1.75, 5.25];
const DIVIDER_OFFSETS: [f64; 3] = [-3.5, 0.0, 3.5];
const ARC_STEP_RAD: f64 = std::f64::consts::PI / 60.0;

/// One scene's generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Signed path curvature, 1/m: positive turns left, zero goes straight.
    /// For intersections it selects and shapes the connector.
    pub curvature: f64,
    pub agent_count: usize,
    pub ego_speed: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ego_speed.is_finite() && self.ego_speed > 0.0) {
            return Err(Error::Config(format!(
                "ego speed must be positive, got {}",
                self.ego_speed
            )));
        }
        if !self.curvature.is_finite() {
            return Err(Error::Config("curvature must be finite".into()));
        }
        match self.kind {
            ScenarioKind::Straight if self.curvature != 0.0 => Err(Error::Config(
                "straight scenarios require zero curvature".into(),
            )),
            ScenarioKind::LeftTurn if self.curvature <= 0.0 => Err(Error::Config(
                "left turns require positive curvature".into(),
            )),
            ScenarioKind::RightTurn if self.curvature >= 0.0 => Err(Error::Config(
                "right turns require negative curvature".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Which file a scene belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Generated scenes with their split labels, index-aligned.
#[derive(Debug, Clone)]
pub struct Dataset {
    scenes: Vec<Scene>,
    splits: Vec<Split>,
}

impl Dataset {
    pub fn new(scenes: Vec<Scene>, splits: Vec<Split>) -> Result<Self> {
        if scenes.len() != splits.len() {
            return Err(Error::Shape(format!(
                "{} scenes vs {} split labels",
                scenes.len(),
                splits.len()
            )));
        }
        Ok(Dataset { scenes, splits })
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn split_scenes(&self, split: Split) -> Vec<&Scene> {
        self.scenes
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == split)
            .map(|(sc, _)| sc)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

/// Dataset-level generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Fractions per scenario kind, ordered as [`ScenarioKind::ALL`].
    pub kind_fractions: [f64; 4],
    pub seed: u64,
    pub horizon: usize,
    /// Ego speed range, m/s.
    pub speed_range: (f64, f64),
    pub max_agents: usize,
    /// Route noise, meters.
    pub route_lateral_sigma: f64,
    pub route_along_sigma: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            train_scenes: 512,
            val_scenes: 128,
            kind_fractions: [0.25; 4],
            seed: 0,
            horizon: DEFAULT_HORIZON,
            speed_range: (5.0, 12.0),
            max_agents: 6,
            route_lateral_sigma: 2.0,
            route_along_sigma: 2.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_scenes + self.val_scenes == 0 {
            return Err(Error::Config("dataset must contain at least one scene".into()));
        }
        let sum: f64 = self.kind_fractions.iter().sum();
        if self.kind_fractions.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "kind fractions must be nonnegative and sum to 1, got sum {sum}"
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let (lo, hi) = self.speed_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(Error::Config(format!("bad speed range {lo}..{hi}")));
        }
        if self.route_lateral_sigma < 0.0 || self.route_along_sigma < 0.0 {
            return Err(Error::Config("route sigmas must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Seeds a generator from a master seed and a purpose label, so independent
/// streams never collide.
pub(crate) fn derived_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(format!("{seed}:{label}").as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Everything a road layout provides, in the road frame (spine along +x,
/// ego on the lane at `EGO_LANE_OFFSET_M` heading +x at the origin's x).
struct RoadPlan {
    map: Vec<MapElement>,
    /// Ego reference path starting at the ego position.
    ego_path: Polyline,
    ego_pose: Pose2,
    /// Travel-oriented lane centerlines usable as agent paths.
    lanes: Vec<Polyline>,
    /// Pedestrian stripe paths (intersections only).
    walkways: Vec<Polyline>,
}

fn polyline(points: Vec<Point2>) -> Polyline {
    let mut pts: Vec<Point2> = Vec::with_capacity(points.len());
    for p in points {
        if pts.last().map_or(true, |q| q.dist(p) > 1e-9) {
            pts.push(p);
        }
    }
    Polyline::new(pts).expect("layout polylines are nondegenerate")
}

fn straight(a: (f64, f64), b: (f64, f64)) -> Polyline {
    polyline(vec![Point2::new(a.0, a.1), Point2::new(b.0, b.1)])
}

fn element(kind: MapKind, geometry: Polyline) -> MapElement {
    MapElement { kind, geometry }
}

/// Quarter-arc sample points from `phi0` to `phi1` around `center`.
fn arc_points(center: Point2, radius: f64, phi0: f64, phi1: f64) -> Vec<Point2> {
    let steps = ((phi1 - phi0).abs() / ARC_STEP_RAD).ceil().max(1.0) as usize;
    (0..=steps)
        .map(|i| {
            let phi = phi0 + (phi1 - phi0) * i as f64 / steps as f64;
            center + Point2::new(phi.cos(), phi.sin()) * radius
        })
        .collect()
}

fn straight_road() -> RoadPlan {
    let (x0, x1) = (-30.0, 90.0);
    let mut map = Vec::new();
    let mut lanes = Vec::new();
    for w in SIGNED_LANE_OFFSETS {
        let lane = if w < 0.0 {
            straight((x0, w), (x1, w))
        } else {
            straight((x1, w), (x0, w))
        };
        map.push(element(MapKind::LaneCenterline, lane.clone()));
        lanes.push(lane);
    }
    for w in DIVIDER_OFFSETS {
        map.push(element(MapKind::LaneDivider, straight((x0, w), (x1, w))));
    }
    for w in [-ROAD_HALFWIDTH_M, ROAD_HALFWIDTH_M] {
        map.push(element(MapKind::RoadBoundary, straight((x0, w), (x1, w))));
    }
    RoadPlan {
        map,
        ego_path: straight((0.0, EGO_LANE_OFFSET_M), (x1, EGO_LANE_OFFSET_M)),
        ego_pose: Pose2::new(Point2::new(0.0, EGO_LANE_OFFSET_M), 0.0),
        lanes,
        walkways: Vec::new(),
    }
}

/// L-shaped road: approach along +x, a 90-degree arc of spine radius
/// `radius` (left when `left`, else right), then a straight exit. Offset `w`
/// is measured to the left of travel.
fn turn_offset_curve(radius: f64, left: bool, w: f64, approach: f64, exit: f64) -> Vec<Point2> {
    let mut pts = vec![Point2::new(-approach, w), Point2::new(0.0, w)];
    if left {
        let center = Point2::new(0.0, radius);
        let r = radius - w;
        pts.extend(arc_points(center, r, -std::f64::consts::FRAC_PI_2, 0.0));
        let corner = center + Point2::new(r, 0.0);
        pts.push(corner + Point2::new(0.0, exit));
    } else {
        let center = Point2::new(0.0, -radius);
        let r = radius + w;
        pts.extend(arc_points(center, r, std::f64::consts::FRAC_PI_2, 0.0));
        let corner = center + Point2::new(r, 0.0);
        pts.push(corner + Point2::new(0.0, -exit));
    }
    pts
}

fn turn_road(radius: f64, left: bool) -> RoadPlan {
    let (approach, exit) = (30.0, 45.0);
    let curve = |w: f64| polyline(turn_offset_curve(radius, left, w, approach, exit));
    let mut map = Vec::new();
    let mut lanes = Vec::new();
    for w in SIGNED_LANE_OFFSETS {
        let fwd = curve(w);
        let lane = if w < 0.0 {
            fwd
        } else {
            polyline(fwd.points().iter().rev().copied().collect())
        };
        map.push(element(MapKind::LaneCenterline, lane.clone()));
        lanes.push(lane);
    }
    for w in DIVIDER_OFFSETS {
        map.push(element(MapKind::LaneDivider, curve(w)));
    }
    for w in [-ROAD_HALFWIDTH_M, ROAD_HALFWIDTH_M] {
        map.push(element(MapKind::RoadBoundary, curve(w)));
    }
    let ego_path = polyline(turn_offset_curve(
        radius,
        left,
        EGO_LANE_OFFSET_M,
        0.0,
        exit,
    ));
    RoadPlan {
        map,
        ego_path,
        ego_pose: Pose2::new(Point2::new(0.0, EGO_LANE_OFFSET_M), 0.0),
        lanes,
        walkways: Vec::new(),
    }
}

/// Two perpendicular roads crossing at (`center_x`, 0). Boundaries and
/// dividers stop at the junction box; centerlines run through it. The ego
/// approaches from the left and goes straight or takes the connector
/// selected by the curvature sign.
fn intersection_road(curvature: f64) -> RoadPlan {
    let cx = 25.0;
    let span = 60.0;
    let gap = 9.0;
    let mut map = Vec::new();
    let mut lanes = Vec::new();

    for w in SIGNED_LANE_OFFSETS {
        let lane = if w < 0.0 {
            straight((cx - span, w), (cx + span, w))
        } else {
            straight((cx + span, w), (cx - span, w))
        };
        map.push(element(MapKind::LaneCenterline, lane.clone()));
        lanes.push(lane);
        // Vertical road: +y travel keeps to x > cx.
        let vlane = if w > 0.0 {
            straight((cx + w, -span), (cx + w, span))
        } else {
            straight((cx + w, span), (cx + w, -span))
        };
        map.push(element(MapKind::LaneCenterline, vlane.clone()));
        lanes.push(vlane);
    }
    for w in DIVIDER_OFFSETS {
        map.push(element(MapKind::LaneDivider, straight((cx - span, w), (cx - gap, w))));
        map.push(element(MapKind::LaneDivider, straight((cx + gap, w), (cx + span, w))));
        map.push(element(MapKind::LaneDivider, straight((cx + w, -span), (cx + w, -gap))));
        map.push(element(MapKind::LaneDivider, straight((cx + w, gap), (cx + w, span))));
    }
    for w in [-ROAD_HALFWIDTH_M, ROAD_HALFWIDTH_M] {
        map.push(element(MapKind::RoadBoundary, straight((cx - span, w), (cx - gap, w))));
        map.push(element(MapKind::RoadBoundary, straight((cx + gap, w), (cx + span, w))));
        map.push(element(MapKind::RoadBoundary, straight((cx + w, -span), (cx + w, -gap))));
        map.push(element(MapKind::RoadBoundary, straight((cx + w, gap), (cx + w, span))));
    }
    let stripe = 8.5;
    let walkways = vec![
        straight((cx - stripe, -ROAD_HALFWIDTH_M), (cx - stripe, ROAD_HALFWIDTH_M)),
        straight((cx + stripe, -ROAD_HALFWIDTH_M), (cx + stripe, ROAD_HALFWIDTH_M)),
        straight((cx - ROAD_HALFWIDTH_M, -stripe), (cx + ROAD_HALFWIDTH_M, -stripe)),
        straight((cx - ROAD_HALFWIDTH_M, stripe), (cx + ROAD_HALFWIDTH_M, stripe)),
    ];
    for w in &walkways {
        map.push(element(MapKind::PedestrianCrossing, w.clone()));
    }

    let y0 = EGO_LANE_OFFSET_M;
    let ego_path = if curvature == 0.0 {
        straight((0.0, y0), (cx + span - 5.0, y0))
    } else {
        let r = 1.0 / curvature.abs();
        let mut pts = vec![Point2::new(0.0, y0)];
        if curvature > 0.0 {
            // Left connector into the +y lane at cx + 1.75.
            let entry_x = (cx - EGO_LANE_OFFSET_M) - r;
            pts.push(Point2::new(entry_x, y0));
            let center = Point2::new(entry_x, y0 + r);
            pts.extend(arc_points(center, r, -std::f64::consts::FRAC_PI_2, 0.0));
            pts.push(Point2::new(entry_x + r, span - 5.0));
        } else {
            // Right connector into the -y lane at cx - 1.75.
            let entry_x = (cx + EGO_LANE_OFFSET_M) - r;
            pts.push(Point2::new(entry_x, y0));
            let center = Point2::new(entry_x, y0 - r);
            pts.extend(arc_points(center, r, std::f64::consts::FRAC_PI_2, 0.0));
            pts.push(Point2::new(entry_x + r, -(span - 5.0)));
        }
        polyline(pts)
    };
    RoadPlan {
        map,
        ego_path,
        ego_pose: Pose2::new(Point2::new(0.0, y0), 0.0),
        lanes,
        walkways,
    }
}

fn build_road(spec: &ScenarioSpec) -> RoadPlan {
    match spec.kind {
        ScenarioKind::Straight => straight_road(),
        ScenarioKind::LeftTurn => turn_road(1.0 / spec.curvature, true),
        ScenarioKind::RightTurn => turn_road(-1.0 / spec.curvature, false),
        ScenarioKind::Intersection => intersection_road(spec.curvature),
    }
}

/// Position and unit travel direction at arclength `s`, extrapolating
/// linearly past the final vertex.
fn along_path(path: &Polyline, s: f64) -> (Point2, Point2) {
    let cum = path.cumulative_arclength();
    let total = *cum.last().expect("polyline nonempty");
    let pts = path.points();
    if s >= total {
        let n = pts.len();
        let d = pts[n - 1] - pts[n - 2];
        let dir = d * (1.0 / d.norm());
        return (pts[n - 1] + dir * (s - total), dir);
    }
    let s = s.max(0.0);
    let mut seg = 0;
    while seg + 2 < cum.len() && cum[seg + 1] <= s {
        seg += 1;
    }
    let d = pts[seg + 1] - pts[seg];
    let len = cum[seg + 1] - cum[seg];
    let dir = d * (1.0 / d.norm());
    (pts[seg] + d * ((s - cum[seg]) / len), dir)
}

/// Constant-speed futures along a path starting at arclength `s0`.
fn path_future(path: &Polyline, s0: f64, speed: f64, horizon: usize) -> Vec<Point2> {
    (1..=horizon)
        .map(|i| along_path(path, s0 + speed * TRAJ_DT * i as f64).0)
        .collect()
}

struct AgentDraw {
    track: AgentTrack,
}

/// Spawns one agent on a path at arclength `s0`.
fn agent_on_path(
    path: &Polyline,
    s0: f64,
    speed: f64,
    size: (f64, f64),
    category: AgentCategory,
    horizon: usize,
) -> AgentDraw {
    let (pos, dir) = along_path(path, s0);
    AgentDraw {
        track: AgentTrack {
            current: Pose2::new(pos, dir.y.atan2(dir.x)),
            velocity: dir * speed,
            size,
            future_gt: path_future(path, s0, speed, horizon),
            category,
        },
    }
}

fn place_agents(
    plan: &RoadPlan,
    spec: &ScenarioSpec,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<AgentTrack> {
    let mut slots: Vec<(usize, f64)> = Vec::new();
    for (li, lane) in plan.lanes.iter().enumerate() {
        let total = *lane.cumulative_arclength().last().expect("nonempty");
        let mut s = 6.0;
        while s < total - 6.0 {
            slots.push((li, s));
            s += 12.0;
        }
    }
    slots.retain(|&(li, s)| {
        along_path(&plan.lanes[li], s).0.dist(plan.ego_pose.position) > MIN_AGENT_SPAWN_DIST_M
    });
    slots.shuffle(rng);

    let mut agents = Vec::new();
    let mut next_slot = 0;
    for _ in 0..spec.agent_count {
        let roll: f64 = rng.gen();
        if !plan.walkways.is_empty() && roll < 0.2 {
            let wi = rng.gen_range(0..plan.walkways.len());
            let stripe = &plan.walkways[wi];
            let total = *stripe.cumulative_arclength().last().expect("nonempty");
            let s0 = rng.gen_range(0.5..total - 0.5);
            agents.push(
                agent_on_path(stripe, s0, 1.2, (0.6, 0.6), AgentCategory::Pedestrian, horizon)
                    .track,
            );
            continue;
        }
        let Some(&(li, s0)) = slots.get(next_slot) else {
            log::warn!(
                "scene seed {}: only {} agent slots for {} requested agents",
                spec.seed,
                agents.len(),
                spec.agent_count
            );
            break;
        };
        next_slot += 1;
        let (speed, size, category) = if roll < 0.35 {
            (rng.gen_range(2.0..5.0), (1.8, 0.6), AgentCategory::Cyclist)
        } else {
            (rng.gen_range(3.0..9.0), (4.0, 1.8), AgentCategory::Vehicle)
        };
        agents.push(agent_on_path(&plan.lanes[li], s0, speed, size, category, horizon).track);
    }
    agents
}

/// Builds one scene: road layout per the spec, ego ground truth at constant
/// speed along its lane, agents on lanes (never within
/// [`MIN_AGENT_SPAWN_DIST_M`] of the ego), a perturbed coarse route, and a
/// random rigid world placement. Bit-identical for equal specs.
pub fn generate_scene(spec: &ScenarioSpec) -> Result<Scene> {
    generate_scene_with(spec, DEFAULT_HORIZON, 2.0, 2.0)
}

/// [`generate_scene`] with explicit horizon and route noise.
pub fn generate_scene_with(
    spec: &ScenarioSpec,
    horizon: usize,
    route_lateral_sigma: f64,
    route_along_sigma: f64,
) -> Result<Scene> {
    spec.validate()?;
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let mut rng = derived_rng(spec.seed, "scene");
    let plan = build_road(spec);

    let ego_gt: Vec<Point2> = (1..=horizon)
        .map(|i| {
            let (p, _) = along_path(&plan.ego_path, spec.ego_speed * TRAJ_DT * i as f64);
            to_ego_frame(p, plan.ego_pose)
        })
        .collect();

    let agents_rf = place_agents(&plan, spec, horizon, &mut rng);

    let route_seed = rng.gen::<u64>();
    let interp = interpolate_route(&plan.ego_path, ROUTE_SPACING_M)?;
    let route_rf = perturb_route(&interp, route_lateral_sigma, route_along_sigma, route_seed)?;

    let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let shift = Point2::new(rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0));
    let world = |p: Point2| p.rotated(theta) + shift;

    let map: Vec<MapElement> = plan
        .map
        .iter()
        .map(|el| MapElement {
            kind: el.kind,
            geometry: el.geometry.transformed(world),
        })
        .collect();
    let agents: Vec<AgentTrack> = agents_rf
        .into_iter()
        .map(|a| AgentTrack {
            current: Pose2::new(world(a.current.position), a.current.heading + theta),
            velocity: a.velocity.rotated(theta),
            size: a.size,
            future_gt: a.future_gt.iter().map(|&p| world(p)).collect(),
            category: a.category,
        })
        .collect();
    let ego_pose = Pose2::new(world(plan.ego_pose.position), plan.ego_pose.heading + theta);

    let scene = Scene {
        meta: SceneMeta {
            id: format!("s{:016x}", spec.seed),
            kind: spec.kind,
            allow_no_centerlines: false,
        },
        ego: EgoState {
            pose: ego_pose,
            velocity: Point2::new(ego_pose.heading.cos(), ego_pose.heading.sin())
                * spec.ego_speed,
        },
        agents,
        map: map.clone(),
        route: route_rf.transformed(world),
        ego_gt,
    };
    scene.validate()?;
    Ok(scene)
}

/// Exact per-kind counts for `n` scenes under the configured fractions:
/// floors first, then leftovers to the earliest kinds.
fn stratified_counts(n: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    let mut used = 0;
    for (c, f) in counts.iter_mut().zip(fractions) {
        *c = (f * n as f64).floor() as usize;
        used += *c;
    }
    let mut i = 0;
    while used < n {
        if fractions[i % 4] > 0.0 {
            counts[i % 4] += 1;
            used += 1;
        }
        i += 1;
    }
    counts
}

fn sample_spec(kind: ScenarioKind, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> ScenarioSpec {
    let curvature = match kind {
        ScenarioKind::Straight => 0.0,
        ScenarioKind::LeftTurn => {
            1.0 / rng.gen_range(TURN_RADIUS_RANGE_M.0..TURN_RADIUS_RANGE_M.1)
        }
        ScenarioKind::RightTurn => {
            -1.0 / rng.gen_range(TURN_RADIUS_RANGE_M.0..TURN_RADIUS_RANGE_M.1)
        }
        ScenarioKind::Intersection => match rng.gen_range(0..3) {
            0 => 0.0,
            1 => 1.0 / rng.gen_range(CONNECTOR_RADIUS_RANGE_M.0..CONNECTOR_RADIUS_RANGE_M.1),
            _ => -1.0 / rng.gen_range(CONNECTOR_RADIUS_RANGE_M.0..CONNECTOR_RADIUS_RANGE_M.1),
        },
    };
    ScenarioSpec {
        kind,
        curvature,
        agent_count: rng.gen_range(0..=cfg.max_agents),
        ego_speed: rng.gen_range(cfg.speed_range.0..cfg.speed_range.1),
        seed: rng.gen(),
    }
}

fn generate_split(cfg: &GenConfig, split: Split, n: usize) -> Result<Vec<Scene>> {
    let mut rng = derived_rng(cfg.seed, split.label());
    let counts = stratified_counts(n, &cfg.kind_fractions);
    let mut kinds: Vec<ScenarioKind> = ScenarioKind::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&k, c)| std::iter::repeat(k).take(c))
        .collect();
    kinds.shuffle(&mut rng);
    let mut scenes = Vec::with_capacity(n);
    for (i, kind) in kinds.into_iter().enumerate() {
        let spec = sample_spec(kind, cfg, &mut rng);
        let mut scene = generate_scene_with(
            &spec,
            cfg.horizon,
            cfg.route_lateral_sigma,
            cfg.route_along_sigma,
        )?;
        scene.meta.id = format!("{}_{:04}", split.label(), i);
        scenes.push(scene);
    }
    Ok(scenes)
}

/// Generates the full train/val dataset in memory. Pure in config.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut scenes = generate_split(cfg, Split::Train, cfg.train_scenes)?;
    let mut splits = vec![Split::Train; cfg.train_scenes];
    scenes.extend(generate_split(cfg, Split::Val, cfg.val_scenes)?);
    splits.extend(vec![Split::Val; cfg.val_scenes]);
    Dataset::new(scenes, splits)
}

/// On-disk dataset description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub seed: u64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    /// Scene counts per scenario kind over both splits.
    pub kind_counts: Vec<(String, usize)>,
    pub config_sha256: String,
}

pub const DATASET_VERSION: &str = "dataset_v1";

/// Writes train.jsonl, val.jsonl, and manifest.json under `dir`.
pub fn write_dataset(dataset: &Dataset, cfg: &GenConfig, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let train: Vec<Scene> = dataset.split_scenes(Split::Train).into_iter().cloned().collect();
    let val: Vec<Scene> = dataset.split_scenes(Split::Val).into_iter().cloned().collect();
    write_scenes_jsonl(&dir.join("train.jsonl"), &train)?;
    write_scenes_jsonl(&dir.join("val.jsonl"), &val)?;

    let mut kind_counts = Vec::new();
    for kind in ScenarioKind::ALL {
        let c = dataset.scenes().iter().filter(|s| s.meta.kind == kind).count();
        kind_counts.push((kind.label().to_string(), c));
    }
    let config_bytes = serde_json::to_vec(cfg)?;
    let manifest = DatasetManifest {
        version: DATASET_VERSION.to_string(),
        seed: cfg.seed,
        train_scenes: train.len(),
        val_scenes: val.len(),
        kind_counts,
        config_sha256: hex(&Sha256::digest(&config_bytes)),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// True when the ego ground truth swings more than 2 m laterally.
pub fn is_turning(scene: &Scene) -> bool {
    lateral_displacement(&scene.ego_gt) > TURNING_THRESHOLD_M
}

/// Scenes whose ego ground truth exceeds 2 m of lateral displacement,
/// strict inequality, split labels preserved.
pub fn turning_subset(dataset: &Dataset) -> Dataset {
    let mut scenes = Vec::new();
    let mut splits = Vec::new();
    for (scene, &split) in dataset.scenes().iter().zip(dataset.splits()) {
        if is_turning(scene) {
            scenes.push(scene.clone());
            splits.push(split);
        }
    }
    Dataset { scenes, splits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::read_scenes_jsonl;

    fn spec(kind: ScenarioKind, curvature: f64, agents: usize, speed: f64, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            kind,
            curvature,
            agent_count: agents,
            ego_speed: speed,
            seed,
        }
    }

    fn all_kind_specs(seed: u64) -> Vec<ScenarioSpec> {
        vec![
            spec(ScenarioKind::Straight, 0.0, 4, 8.0, seed),
            spec(ScenarioKind::LeftTurn, 1.0 / 20.0, 3, 8.0, seed + 1),
            spec(ScenarioKind::RightTurn, -1.0 / 18.0, 5, 7.0, seed + 2),
            spec(ScenarioKind::Intersection, 1.0 / 12.0, 6, 6.0, seed + 3),
            spec(ScenarioKind::Intersection, 0.0, 6, 9.0, seed + 4),
            spec(ScenarioKind::Intersection, -1.0 / 11.0, 6, 6.0, seed + 5),
        ]
    }

    #[test]
    fn straight_scene_has_constant_velocity_ground_truth() {
        let s = generate_scene(&spec(ScenarioKind::Straight, 0.0, 0, 5.0, 7)).unwrap();
        let expected = [2.5, 5.0, 7.5, 10.0, 12.5, 15.0];
        assert_eq!(s.ego_gt.len(), expected.len());
        for (p, x) in s.ego_gt.iter().zip(expected) {
            assert!((p.x - x).abs() < 1e-9, "{} vs {x}", p.x);
            assert!(p.y.abs() < 1e-9);
        }
    }

    #[test]
    fn left_turn_exceeds_lateral_threshold() {
        let s =
            generate_scene(&spec(ScenarioKind::LeftTurn, 1.0 / 20.0, 0, 8.0, 11)).unwrap();
        assert!(lateral_displacement(&s.ego_gt) > 2.0);
        assert!(is_turning(&s));
    }

    #[test]
    fn same_seed_gives_bit_identical_scene() {
        for sp in all_kind_specs(100) {
            let a = serde_json::to_string(&generate_scene(&sp).unwrap()).unwrap();
            let b = serde_json::to_string(&generate_scene(&sp).unwrap()).unwrap();
            assert_eq!(a, b, "kind {:?}", sp.kind);
        }
    }

    #[test]
    fn scenes_validate_and_keep_boundary_clearance() {
        for sp in all_kind_specs(200) {
            let s = generate_scene(&sp).unwrap();
            s.validate().unwrap();
            let boundaries = s.map_in_ego(MapKind::RoadBoundary);
            assert!(!boundaries.is_empty());
            for p in &s.ego_gt {
                let min = boundaries
                    .iter()
                    .map(|b| b.nearest_point(*p).distance)
                    .fold(f64::INFINITY, f64::min);
                assert!(min > 0.5, "kind {:?}: clearance {min}", sp.kind);
            }
        }
    }

    #[test]
    fn agents_spawn_away_from_ego_with_full_futures() {
        for sp in all_kind_specs(300) {
            let s = generate_scene(&sp).unwrap();
            for a in &s.agents {
                assert!(a.current.position.dist(s.ego.pose.position) > 5.0);
                assert_eq!(a.future_gt.len(), s.ego_gt.len());
                assert!(a.future_gt.iter().all(|p| p.is_finite()));
                let speed = a.velocity.norm();
                assert!(speed > 0.0);
                // First future step stays near the constant-speed prediction.
                let step = a.future_gt[0].dist(a.current.position);
                assert!(step <= speed * TRAJ_DT + 1e-6);
            }
        }
    }

    #[test]
    fn route_extends_fifty_meters_ahead() {
        for sp in all_kind_specs(400) {
            let s = generate_scene(&sp).unwrap();
            let total = *s.route.cumulative_arclength().last().unwrap();
            assert!(total >= 50.0, "kind {:?}: route length {total}", sp.kind);
        }
    }

    #[test]
    fn spec_validation_rules() {
        assert!(spec(ScenarioKind::Straight, 0.1, 0, 5.0, 0).validate().is_err());
        assert!(spec(ScenarioKind::LeftTurn, -0.05, 0, 5.0, 0).validate().is_err());
        assert!(spec(ScenarioKind::RightTurn, 0.05, 0, 5.0, 0).validate().is_err());
        assert!(spec(ScenarioKind::Straight, 0.0, 0, 0.0, 0).validate().is_err());
        assert!(spec(ScenarioKind::Intersection, 0.0, 3, 5.0, 0).validate().is_ok());
    }

    #[test]
    fn stratification_is_exact() {
        let cfg = GenConfig {
            train_scenes: 40,
            val_scenes: 0,
            seed: 5,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 40);
        for kind in ScenarioKind::ALL {
            let c = ds.scenes().iter().filter(|s| s.meta.kind == kind).count();
            assert_eq!(c, 10, "kind {kind:?}");
        }
    }

    #[test]
    fn dataset_regeneration_is_byte_identical() {
        let cfg = GenConfig {
            train_scenes: 12,
            val_scenes: 4,
            seed: 9,
            ..GenConfig::default()
        };
        let tmp = tempfile::tempdir().unwrap();
        let dir_a = tmp.path().join("a");
        let dir_b = tmp.path().join("b");
        for dir in [&dir_a, &dir_b] {
            let ds = generate_dataset(&cfg).unwrap();
            write_dataset(&ds, &cfg, dir).unwrap();
        }
        for name in ["train.jsonl", "val.jsonl", "manifest.json"] {
            let a = std::fs::read(dir_a.join(name)).unwrap();
            let b = std::fs::read(dir_b.join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        let train = read_scenes_jsonl(&dir_a.join("train.jsonl")).unwrap();
        assert_eq!(train.len(), 12);
        for s in &train {
            s.validate().unwrap();
        }
    }

    #[test]
    fn turning_subset_matches_brute_force_and_is_strict() {
        let cfg = GenConfig {
            train_scenes: 24,
            val_scenes: 8,
            seed: 13,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let subset = turning_subset(&ds);
        let expected: Vec<&Scene> = ds
            .scenes()
            .iter()
            .filter(|s| lateral_displacement(&s.ego_gt) > 2.0)
            .collect();
        assert_eq!(subset.len(), expected.len());
        for (a, b) in subset.scenes().iter().zip(expected) {
            assert_eq!(a.meta.id, b.meta.id);
        }
        assert!(!subset.is_empty());

        let mut boundary = ds.scenes()[0].clone();
        boundary.ego_gt = vec![Point2::new(1.0, 2.0); boundary.ego_gt.len()];
        for a in &mut boundary.agents {
            a.future_gt.truncate(boundary.ego_gt.len());
        }
        assert!(!is_turning(&boundary));
        boundary.ego_gt[0].y = 2.0 + 1e-9;
        assert!(is_turning(&boundary));
    }

    #[test]
    fn all_straight_dataset_has_empty_turning_subset() {
        let cfg = GenConfig {
            train_scenes: 10,
            val_scenes: 0,
            kind_fractions: [1.0, 0.0, 0.0, 0.0],
            seed: 21,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(turning_subset(&ds).is_empty());
    }

    #[test]
    fn intersection_maneuvers_shape_ground_truth() {
        let left = generate_scene(&spec(ScenarioKind::Intersection, 1.0 / 12.0, 0, 9.0, 31))
            .unwrap();
        let right = generate_scene(&spec(ScenarioKind::Intersection, -1.0 / 12.0, 0, 9.0, 32))
            .unwrap();
        let straight = generate_scene(&spec(ScenarioKind::Intersection, 0.0, 0, 9.0, 33))
            .unwrap();
        assert!(left.ego_gt.last().unwrap().y > 0.0);
        assert!(right.ego_gt.last().unwrap().y < 0.0);
        assert!(straight.ego_gt.iter().all(|p| p.y.abs() < 1e-9));
        // Crossings only appear in intersections.
        assert!(!left.map_in_ego(MapKind::PedestrianCrossing).is_empty());
    }
}
