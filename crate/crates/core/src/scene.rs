//! Scene container: one driving sample with ego state, agents, vectorized
//! map, coarse route, and the ground-truth ego future. JSONL I/O lives here.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{to_ego_frame, vec_to_ego_frame, normalize_angle, Point2, Polyline, Pose2};

/// Seconds between consecutive trajectory points.
pub const TRAJ_DT: f64 = 0.5;

/// Schema tag written into every serialized scene line.
pub const SCENE_VERSION: &str = "scene_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    LaneDivider,
    RoadBoundary,
    PedestrianCrossing,
    LaneCenterline,
}

impl MapKind {
    pub const ALL: [MapKind; 4] = [
        MapKind::LaneDivider,
        MapKind::RoadBoundary,
        MapKind::PedestrianCrossing,
        MapKind::LaneCenterline,
    ];

    /// Index into the kind one-hot used by the map token encoder.
    pub fn one_hot_index(self) -> usize {
        match self {
            MapKind::LaneDivider => 0,
            MapKind::RoadBoundary => 1,
            MapKind::PedestrianCrossing => 2,
            MapKind::LaneCenterline => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub kind: MapKind,
    pub geometry: Polyline,
}

impl MapElement {
    /// Geometry re-expressed in the frame anchored at `ego`.
    pub fn to_ego_frame(&self, ego: Pose2) -> MapElement {
        MapElement {
            kind: self.kind,
            geometry: self.geometry.transformed(|p| to_ego_frame(p, ego)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentCategory {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl AgentCategory {
    pub const ALL: [AgentCategory; 3] = [
        AgentCategory::Vehicle,
        AgentCategory::Pedestrian,
        AgentCategory::Cyclist,
    ];

    pub fn one_hot_index(self) -> usize {
        match self {
            AgentCategory::Vehicle => 0,
            AgentCategory::Pedestrian => 1,
            AgentCategory::Cyclist => 2,
        }
    }
}

/// One surrounding agent with its ground-truth future.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub current: Pose2,
    /// Velocity vector, m/s, same frame as `current`.
    pub velocity: Point2,
    /// (length, width) in meters.
    pub size: (f64, f64),
    /// k future positions at `TRAJ_DT` steps, same frame as `current`.
    pub future_gt: Vec<Point2>,
    pub category: AgentCategory,
}

impl AgentTrack {
    pub fn to_ego_frame(&self, ego: Pose2) -> AgentTrack {
        AgentTrack {
            current: Pose2::new(
                to_ego_frame(self.current.position, ego),
                normalize_angle(self.current.heading - ego.heading),
            ),
            velocity: vec_to_ego_frame(self.velocity, ego),
            size: self.size,
            future_gt: self.future_gt.iter().map(|&p| to_ego_frame(p, ego)).collect(),
            category: self.category,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2,
    /// Velocity vector, m/s, world frame.
    pub velocity: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    LeftTurn,
    RightTurn,
    Intersection,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Straight,
        ScenarioKind::LeftTurn,
        ScenarioKind::RightTurn,
        ScenarioKind::Intersection,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::LeftTurn => "left_turn",
            ScenarioKind::RightTurn => "right_turn",
            ScenarioKind::Intersection => "intersection",
        }
    }
}

fn default_false() -> bool {
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub id: String,
    pub kind: ScenarioKind,
    /// Set for deliberately centerline-free scenes (fallback-grid exercises).
    #[serde(default = "default_false")]
    pub allow_no_centerlines: bool,
}

/// One driving sample. Map, agents, ego, and route are in the world frame;
/// `ego_gt` is in the ego frame at t=0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub meta: SceneMeta,
    pub ego: EgoState,
    pub agents: Vec<AgentTrack>,
    pub map: Vec<MapElement>,
    pub route: Polyline,
    pub ego_gt: Vec<Point2>,
}

impl Scene {
    /// Number of future steps carried by this scene.
    pub fn horizon(&self) -> usize {
        self.ego_gt.len()
    }

    /// Map elements of one kind, re-expressed in the ego frame.
    pub fn map_in_ego(&self, kind: MapKind) -> Vec<Polyline> {
        self.map
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| e.geometry.transformed(|p| to_ego_frame(p, self.ego.pose)))
            .collect()
    }

    pub fn agents_in_ego(&self) -> Vec<AgentTrack> {
        self.agents.iter().map(|a| a.to_ego_frame(self.ego.pose)).collect()
    }

    /// Checks the structural invariants the rest of the pipeline relies on.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidScene {
            id: self.meta.id.clone(),
            reason,
        });
        if self.ego_gt.is_empty() {
            return fail("empty ego_gt".into());
        }
        if !self.ego_gt.iter().all(|p| p.is_finite()) {
            return fail("non-finite ego_gt".into());
        }
        if !self.ego.pose.position.is_finite() || !self.ego.velocity.is_finite() {
            return fail("non-finite ego state".into());
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.future_gt.len() != self.ego_gt.len() {
                return fail(format!(
                    "agent {i} future has {} steps, scene horizon is {}",
                    a.future_gt.len(),
                    self.ego_gt.len()
                ));
            }
            if !(a.size.0 > 0.0 && a.size.1 > 0.0) {
                return fail(format!("agent {i} has non-positive size"));
            }
        }
        let has_centerline = self.map.iter().any(|e| e.kind == MapKind::LaneCenterline);
        if !has_centerline && !self.meta.allow_no_centerlines {
            return fail("no lane_centerline and allow_no_centerlines unset".into());
        }
        Ok(())
    }
}

/// k future points at `TRAJ_DT` spacing, ego frame at t=0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrajectory {
    points: Vec<Point2>,
}

impl PlannedTrajectory {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("planned trajectory"));
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("planned trajectory"));
        }
        Ok(PlannedTrajectory { points })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// On-disk line format: the scene plus a schema version tag.
#[derive(Serialize, Deserialize)]
struct SceneRecord {
    version: String,
    #[serde(flatten)]
    scene: Scene,
}

/// Writes scenes as JSONL, one versioned record per line.
pub fn write_scenes_jsonl(path: &Path, scenes: &[Scene]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for scene in scenes {
        let record = SceneRecord {
            version: SCENE_VERSION.to_string(),
            scene: scene.clone(),
        };
        serde_json::to_writer(&mut file, &record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Reads a JSONL scene file, validating version and scene invariants.
pub fn read_scenes_jsonl(path: &Path) -> Result<Vec<Scene>> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut scenes = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if record.version != SCENE_VERSION {
            return Err(Error::Format(format!(
                "{}:{}: unsupported scene version {:?}",
                path.display(),
                lineno + 1,
                record.version
            )));
        }
        record.scene.validate()?;
        scenes.push(record.scene);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene() -> Scene {
        Scene {
            meta: SceneMeta {
                id: "s0".into(),
                kind: ScenarioKind::Straight,
                allow_no_centerlines: false,
            },
            ego: EgoState {
                pose: Pose2::new(Point2::new(3.0, -2.0), 0.5),
                velocity: Point2::new(4.0, 0.0),
            },
            agents: vec![AgentTrack {
                current: Pose2::new(Point2::new(10.0, 0.0), 0.5),
                velocity: Point2::new(3.0, 0.0),
                size: (4.0, 1.8),
                future_gt: vec![Point2::new(11.0, 0.0), Point2::new(12.0, 0.0)],
                category: AgentCategory::Vehicle,
            }],
            map: vec![MapElement {
                kind: MapKind::LaneCenterline,
                geometry: Polyline::new(vec![Point2::ZERO, Point2::new(50.0, 0.0)]).unwrap(),
            }],
            route: Polyline::new(vec![Point2::ZERO, Point2::new(60.0, 0.0)]).unwrap(),
            ego_gt: vec![Point2::new(2.0, 0.0), Point2::new(4.0, 0.0)],
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_scene() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        let scenes = vec![tiny_scene(), tiny_scene()];
        write_scenes_jsonl(&path, &scenes).unwrap();
        let back = read_scenes_jsonl(&path).unwrap();
        assert_eq!(back, scenes);
    }

    #[test]
    fn jsonl_rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenes.jsonl");
        write_scenes_jsonl(&path, &[tiny_scene()]).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace(SCENE_VERSION, "scene_v999");
        std::fs::write(&path, text).unwrap();
        assert!(read_scenes_jsonl(&path).is_err());
    }

    #[test]
    fn validate_rejects_future_length_mismatch() {
        let mut scene = tiny_scene();
        scene.agents[0].future_gt.pop();
        assert!(scene.validate().is_err());
    }

    #[test]
    fn validate_requires_centerline_or_flag() {
        let mut scene = tiny_scene();
        scene.map.clear();
        assert!(scene.validate().is_err());
        scene.meta.allow_no_centerlines = true;
        assert!(scene.validate().is_ok());
    }

    #[test]
    fn agent_ego_frame_transform_is_consistent() {
        let scene = tiny_scene();
        let agents = scene.agents_in_ego();
        let expected = to_ego_frame(scene.agents[0].current.position, scene.ego.pose);
        assert!(agents[0].current.position.dist(expected) < 1e-12);
        // Speed magnitude is rotation-invariant.
        assert!((agents[0].velocity.norm() - scene.agents[0].velocity.norm()).abs() < 1e-12);
    }
}
