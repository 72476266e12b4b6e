//! Open-loop evaluation: displacement error and oriented-box collision
//! rates at fixed horizons, aggregated over a scene set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{boxes_overlap, OrientedBox, Point2};
use crate::neural::ParamStore;
use crate::par::{map_ordered, Parallelism};
use crate::planner::{plan, ModelConfig, PlanMode};
use crate::scene::{AgentTrack, Scene, TRAJ_DT};

use super::load_trained;

/// Schema tag stamped into every report.
pub const METRICS_VERSION: &str = "metrics_v1";
/// Ego vehicle footprint used for collision checks, meters.
pub const EGO_LENGTH_M: f64 = 4.0;
pub const EGO_WIDTH_M: f64 = 1.8;
/// Horizons reported, seconds.
pub const EVAL_TIMES_S: [f64; 3] = [1.0, 2.0, 3.0];

/// How displacement error at horizon t is reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Mode {
    /// Distance between the planned and true position at t itself.
    Instantaneous,
    /// Mean distance over all steps up to and including t.
    Cumulative,
}

impl L2Mode {
    pub fn label(self) -> &'static str {
        match self {
            L2Mode::Instantaneous => "instantaneous",
            L2Mode::Cumulative => "cumulative",
        }
    }

    pub fn parse(s: &str) -> Result<L2Mode> {
        match s {
            "instantaneous" => Ok(L2Mode::Instantaneous),
            "cumulative" => Ok(L2Mode::Cumulative),
            other => Err(Error::Config(format!("unknown l2 mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for L2Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Aggregated metrics for one scene set. Distances are meters, collision
/// rates are percentages of scenes; `*_avg*` fields are arithmetic means
/// of the three horizon values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: String,
    pub subset: String,
    pub mode: PlanMode,
    pub l2_mode: L2Mode,
    pub samples: usize,
    pub l2_m: [f64; 3],
    pub l2_avg_m: f64,
    pub collision_pct: [f64; 3],
    pub collision_avg_pct: f64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if self.version != METRICS_VERSION {
            return Err(Error::Config(format!("unknown metrics version {:?}", self.version)));
        }
        if self.samples == 0 {
            return Err(Error::Empty("metrics sample set"));
        }
        for v in self.l2_m.iter().chain([&self.l2_avg_m]) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Config(format!("displacement must be nonnegative, got {v}")));
            }
        }
        for v in self.collision_pct.iter().chain([&self.collision_avg_pct]) {
            if !(v.is_finite() && (0.0..=100.0).contains(v)) {
                return Err(Error::Config(format!("collision rate must lie in [0, 100], got {v}")));
            }
        }
        let l2_mean = self.l2_m.iter().sum::<f64>() / 3.0;
        let col_mean = self.collision_pct.iter().sum::<f64>() / 3.0;
        if (self.l2_avg_m - l2_mean).abs() > 1e-12 || (self.collision_avg_pct - col_mean).abs() > 1e-12 {
            return Err(Error::Config("averages disagree with horizon values".into()));
        }
        Ok(())
    }
}

/// Step index of each reported horizon along a plan whose first point sits
/// at `TRAJ_DT` seconds.
pub fn horizon_indices() -> [usize; 3] {
    EVAL_TIMES_S.map(|t| (t / TRAJ_DT).round() as usize - 1)
}

/// Heading at each plan point: the direction of the step arriving there.
/// The first point keeps the ego's frame heading (zero), and a zero-length
/// step carries the previous heading forward.
pub fn plan_headings(points: &[Point2]) -> Vec<f64> {
    let mut headings = Vec::with_capacity(points.len());
    let mut prev = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            let d = *p - points[i - 1];
            if d.norm() > 0.0 {
                prev = d.y.atan2(d.x);
            }
        }
        headings.push(prev);
    }
    headings
}

/// Heading at each future step of an agent track, seeded by its current
/// pose so the first step points from the current position.
fn track_headings(track: &AgentTrack) -> Vec<f64> {
    let mut headings = Vec::with_capacity(track.future_gt.len());
    let mut prev_point = track.current.position;
    let mut prev_heading = track.current.heading;
    for p in &track.future_gt {
        let d = *p - prev_point;
        if d.norm() > 0.0 {
            prev_heading = d.y.atan2(d.x);
        }
        headings.push(prev_heading);
        prev_point = *p;
    }
    headings
}

/// Whether the ego footprint along `plan` hits any agent at step `step`.
fn step_collides(
    plan: &[Point2],
    ego_headings: &[f64],
    agents: &[(AgentTrack, Vec<f64>)],
    step: usize,
) -> Result<bool> {
    let ego_box = OrientedBox::new(plan[step], ego_headings[step], EGO_LENGTH_M, EGO_WIDTH_M)?;
    for (track, headings) in agents {
        let center = track.future_gt[step];
        let (length, width) = track.size;
        let agent_box = OrientedBox::new(center, headings[step], length, width)?;
        if boxes_overlap(&ego_box, &agent_box) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Scores planned trajectories (ego frame, `TRAJ_DT` spacing) against the
/// scenes they were planned for. Collision at horizon t means the ego box
/// overlaps any agent box at any step up to t, so rates are nondecreasing
/// in the horizon by construction. Pure: no model, no randomness.
pub fn compute_metrics(
    scenes: &[Scene],
    plans: &[Vec<Point2>],
    mode: PlanMode,
    l2_mode: L2Mode,
    subset: &str,
) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(Error::Empty("evaluation scenes"));
    }
    if scenes.len() != plans.len() {
        return Err(Error::Shape(format!(
            "{} scenes but {} plans",
            scenes.len(),
            plans.len()
        )));
    }
    let idx = horizon_indices();
    let needed = idx[2] + 1;
    let mut l2_sum = [0.0f64; 3];
    let mut collided = [0usize; 3];

    for (scene, plan) in scenes.iter().zip(plans) {
        if plan.len() < needed || scene.ego_gt.len() < needed {
            return Err(Error::Shape(format!(
                "horizon needs {needed} steps, plan has {} and ground truth {}",
                plan.len(),
                scene.ego_gt.len()
            )));
        }
        let agents: Vec<(AgentTrack, Vec<f64>)> = scene
            .agents_in_ego()
            .into_iter()
            .map(|t| {
                let h = track_headings(&t);
                (t, h)
            })
            .collect();
        for (track, _) in &agents {
            if track.future_gt.len() < needed {
                return Err(Error::Shape(format!(
                    "agent future has {} steps, horizon needs {needed}",
                    track.future_gt.len()
                )));
            }
        }
        let ego_headings = plan_headings(plan);

        for (h, &i) in idx.iter().enumerate() {
            let l2 = match l2_mode {
                L2Mode::Instantaneous => plan[i].dist(scene.ego_gt[i]),
                L2Mode::Cumulative => {
                    let sum: f64 = (0..=i).map(|j| plan[j].dist(scene.ego_gt[j])).sum();
                    sum / (i + 1) as f64
                }
            };
            l2_sum[h] += l2;
        }

        let mut hit_step = None;
        for step in 0..needed {
            if step_collides(plan, &ego_headings, &agents, step)? {
                hit_step = Some(step);
                break;
            }
        }
        if let Some(step) = hit_step {
            for (h, &i) in idx.iter().enumerate() {
                if step <= i {
                    collided[h] += 1;
                }
            }
        }
    }

    let n = scenes.len() as f64;
    let l2_m = l2_sum.map(|s| s / n);
    let collision_pct = collided.map(|c| 100.0 * c as f64 / n);
    let report = MetricsReport {
        version: METRICS_VERSION.to_string(),
        subset: subset.to_string(),
        mode,
        l2_mode,
        samples: scenes.len(),
        l2_avg_m: l2_m.iter().sum::<f64>() / 3.0,
        l2_m,
        collision_avg_pct: collision_pct.iter().sum::<f64>() / 3.0,
        collision_pct,
    };
    report.validate()?;
    Ok(report)
}

/// Plans every scene with the given parameters and scores the results.
pub fn evaluate_with_store(
    store: &ParamStore,
    model: &ModelConfig,
    mode: PlanMode,
    scenes: &[Scene],
    l2_mode: L2Mode,
    subset: &str,
    par: Parallelism,
) -> Result<MetricsReport> {
    let plans = map_ordered(par, scenes, |scene| {
        plan(store, model, scene, mode).map(|out| out.trajectory.points().to_vec())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    compute_metrics(scenes, &plans, mode, l2_mode, subset)
}

/// Loads a checkpoint and scores it on the given scenes, planning in the
/// mode the checkpoint was trained for.
pub fn evaluate(
    ckpt_dir: &Path,
    scenes: &[Scene],
    l2_mode: L2Mode,
    subset: &str,
    par: Parallelism,
) -> Result<MetricsReport> {
    let (store, cfg) = load_trained(ckpt_dir)?;
    evaluate_with_store(&store, &cfg.model, cfg.mode, scenes, l2_mode, subset, par)
}
