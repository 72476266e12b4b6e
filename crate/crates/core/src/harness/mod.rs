//! Training, evaluation, and ablation drivers: the two-stage optimization
//! loop with per-stage cosine schedules, the per-scene loss graph shared by
//! the trainer and the finite-difference checker, and checkpoint plumbing.

mod ablation;
mod metrics;

pub use ablation::{run_ablation, write_ablation_csv, AblationConfig, AblationRow};
pub use metrics::{
    compute_metrics, evaluate, evaluate_with_store, L2Mode, MetricsReport, EGO_LENGTH_M,
    EGO_WIDTH_M, METRICS_VERSION,
};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Polyline, Pose2};
use crate::neural::{
    adamw_step, finite_diff_check, load_checkpoint, save_checkpoint, AdamState, CheckpointData,
    FdReport, Gradients, Graph, LrSchedule, ParamStore, Var,
};
use crate::objectives::{
    boundary_term_graph, collision_term_graph, direction_term_graph, overall_loss_graph,
    planning_loss_graph, regression_term_graph, target_bce_graph, target_label, LossWeights,
    PlanningTermVars, TrainStage,
};
use crate::par::{map_ordered, Parallelism};
use crate::planner::{
    build_context, complete_trajectory_graph, complete_without_target_graph,
    register_model_params, sample_candidates, score_candidates_graph, ModelConfig, PlanMode,
};
use crate::scene::{
    AgentCategory, AgentTrack, EgoState, MapElement, MapKind, ScenarioKind, Scene, SceneMeta,
    TRAJ_DT,
};
use crate::scene_tokens::{encode_scene_graph, forecast_graph, motion_loss_graph};
use crate::simworld::derived_rng;

/// Full training recipe. Stage one fits the scene encoders and motion head;
/// stage two adds target scoring and trajectory decoding on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: PlanMode,
    pub weights: LossWeights,
    pub model: ModelConfig,
    /// Dataset directory this config was trained from, if any.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_stage1: 20,
            epochs_stage2: 40,
            batch_size: 8,
            base_lr: 1e-4,
            min_lr: 1e-6,
            weight_decay: 0.01,
            seed: 0,
            mode: PlanMode::TgtPath,
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            data_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_stage1 + self.epochs_stage2 == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base lr must be positive, got {}", self.base_lr)));
        }
        if !(self.min_lr.is_finite() && (0.0..=self.base_lr).contains(&self.min_lr)) {
            return Err(Error::Config(format!(
                "min lr must lie in [0, base], got {}",
                self.min_lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be nonnegative".into()));
        }
        self.weights.validate()?;
        self.model.validate()
    }
}

/// Checkpoint payload stored next to the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointExtra {
    pub config: TrainConfig,
}

/// Per-scene loss terms as tape nodes. `total` is what gets differentiated;
/// the components are kept for curve logging.
pub struct SceneLossVars {
    pub total: Var,
    pub agent: Option<Var>,
    pub target: Option<Var>,
    pub plan: Option<Var>,
}

/// Builds the training loss for one scene at one stage.
///
/// Stage one touches only the scene encoders and the motion head: no
/// planner parameter is bound into the graph, so none can receive a
/// gradient or an optimizer update. Stage two runs the full pipeline with
/// the decoder conditioned on the label candidate (closest to the ground
/// truth endpoint) rather than the current argmax, so early scoring noise
/// does not corrupt decoder updates.
pub fn scene_loss_graph(
    g: &mut Graph,
    store: &ParamStore,
    model: &ModelConfig,
    weights: &LossWeights,
    scene: &Scene,
    mode: PlanMode,
    stage: TrainStage,
) -> Result<SceneLossVars> {
    let agents_ego = scene.agents_in_ego();

    if stage == TrainStage::One {
        let enc = encode_scene_graph(g, store, &model.tokens, scene)?;
        let agent = match forecast_graph(g, store, &model.tokens, &enc)? {
            Some(fc) => {
                let futures: Vec<Vec<Point2>> = enc
                    .agent_kept
                    .iter()
                    .map(|&i| agents_ego[i].future_gt.clone())
                    .collect();
                Some(motion_loss_graph(g, &model.tokens, &fc, &futures)?)
            }
            None => None,
        };
        let total = overall_loss_graph(g, None, agent, None, None, stage, weights);
        return Ok(SceneLossVars {
            total,
            agent,
            target: None,
            plan: None,
        });
    }

    let ctx = build_context(g, store, model, scene, mode)?;
    let agent = match forecast_graph(g, store, &model.tokens, &ctx.enc)? {
        Some(fc) => {
            let futures: Vec<Vec<Point2>> = ctx
                .enc
                .agent_kept
                .iter()
                .map(|&i| agents_ego[i].future_gt.clone())
                .collect();
            Some(motion_loss_graph(g, &model.tokens, &fc, &futures)?)
        }
        None => None,
    };

    let gt_end = *scene.ego_gt.last().ok_or(Error::Empty("ego ground truth"))?;
    let (traj, target) = if mode == PlanMode::NoTarget {
        let traj = complete_without_target_graph(
            g,
            store,
            model.horizon(),
            ctx.intent,
            ctx.scene_tokens,
        )?;
        (traj, None)
    } else {
        let cands = sample_candidates(scene, &model.candidates)?;
        let probs = score_candidates_graph(g, store, &cands, ctx.intent, ctx.scene_tokens)?;
        let label = target_label(&cands, gt_end);
        let target = target_bce_graph(g, probs, &label)?;
        let teacher_idx = label
            .iter()
            .position(|&v| v == 1.0)
            .expect("target label is one-hot");
        let traj = complete_trajectory_graph(
            g,
            store,
            model.horizon(),
            cands.coords()[teacher_idx],
            ctx.intent,
            ctx.scene_tokens,
        )?;
        (traj, Some(target))
    };

    let futures: Vec<Vec<Point2>> = agents_ego.iter().map(|a| a.future_gt.clone()).collect();
    let terms = PlanningTermVars {
        collision: collision_term_graph(g, traj, &futures, weights.alpha_col)?,
        boundary: boundary_term_graph(
            g,
            traj,
            &scene.map_in_ego(MapKind::RoadBoundary),
            weights.alpha_bd,
        )?,
        direction: direction_term_graph(g, traj, &scene.map_in_ego(MapKind::LaneDivider))?,
        regression: regression_term_graph(g, traj, &scene.ego_gt)?,
    };
    let plan = Some(planning_loss_graph(g, &terms, weights));
    let total = overall_loss_graph(g, None, agent, target, plan, stage, weights);
    Ok(SceneLossVars {
        total,
        agent,
        target,
        plan,
    })
}

/// One optimizer step's log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub stage: u8,
    pub lr: f64,
    pub map_loss: f64,
    pub agent_loss: f64,
    pub target_loss: f64,
    pub plan_loss: f64,
    pub total_loss: f64,
}

/// Training output: the fitted parameters plus the loss curve.
pub struct TrainResult {
    pub store: ParamStore,
    pub steps: usize,
    pub final_loss: f64,
    pub rows: Vec<LossRow>,
    pub checkpoint_dir: Option<PathBuf>,
}

struct SceneStep {
    grads: Gradients,
    agent: f64,
    target: f64,
    plan: f64,
    total: f64,
}

fn scene_step(
    store: &ParamStore,
    cfg: &TrainConfig,
    scene: &Scene,
    stage: TrainStage,
) -> Result<SceneStep> {
    let mut g = Graph::new();
    let vars = scene_loss_graph(&mut g, store, &cfg.model, &cfg.weights, scene, cfg.mode, stage)?;
    let read = |v: Option<Var>| v.map_or(0.0, |v| g.scalar_value(v));
    let step = SceneStep {
        agent: read(vars.agent),
        target: read(vars.target),
        plan: read(vars.plan),
        total: g.scalar_value(vars.total),
        grads: g.backward(vars.total)?,
    };
    Ok(step)
}

/// Runs both stages over the scenes: per-epoch seeded shuffles, batched
/// gradient averaging (summed in index order so parallel and sequential
/// runs agree bitwise), AdamW updates under a per-stage cosine schedule,
/// and a non-finite-loss abort. Deterministic for a fixed config.
pub fn train(
    cfg: &TrainConfig,
    scenes: &[Scene],
    out_dir: Option<&Path>,
    par: Parallelism,
) -> Result<TrainResult> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("training scenes"));
    }
    let mut store = ParamStore::new(cfg.seed);
    register_model_params(&mut store, &cfg.model)?;
    let mut adam = AdamState::new();
    let mut rows: Vec<LossRow> = Vec::new();
    let steps_per_epoch = scenes.len().div_ceil(cfg.batch_size);
    let mut global_step = 0usize;
    let mut stage2_schedule = LrSchedule::new(cfg.base_lr, cfg.min_lr, 1)?;

    for (stage, stage_tag, epochs) in [
        (TrainStage::One, 1u8, cfg.epochs_stage1),
        (TrainStage::Two, 2u8, cfg.epochs_stage2),
    ] {
        if epochs == 0 {
            continue;
        }
        let schedule = LrSchedule::new(cfg.base_lr, cfg.min_lr, epochs * steps_per_epoch)?;
        if stage == TrainStage::Two {
            stage2_schedule = schedule.clone();
        }
        let mut stage_step = 0usize;
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..scenes.len()).collect();
            order.shuffle(&mut derived_rng(
                cfg.seed,
                &format!("shuffle:{stage_tag}:{epoch}"),
            ));
            for batch in order.chunks(cfg.batch_size) {
                let lr = schedule.at(stage_step);
                let results = map_ordered(par, batch, |&i| {
                    scene_step(&store, cfg, &scenes[i], stage)
                });
                let mut grads = Gradients::default();
                let inv = 1.0 / batch.len() as f64;
                let mut row = LossRow {
                    step: global_step,
                    stage: stage_tag,
                    lr,
                    map_loss: 0.0,
                    agent_loss: 0.0,
                    target_loss: 0.0,
                    plan_loss: 0.0,
                    total_loss: 0.0,
                };
                for result in results {
                    let step = result?;
                    grads.accumulate(&step.grads);
                    row.agent_loss += step.agent * inv;
                    row.target_loss += step.target * inv;
                    row.plan_loss += step.plan * inv;
                    row.total_loss += step.total * inv;
                }
                if !row.total_loss.is_finite() {
                    return Err(Error::Diverged {
                        step: global_step,
                        loss: row.total_loss,
                    });
                }
                grads.scale(inv);
                adamw_step(&mut store, &grads, &mut adam, lr, cfg.weight_decay)?;
                rows.push(row);
                stage_step += 1;
                global_step += 1;
            }
        }
    }

    let final_loss = rows.last().map_or(f64::NAN, |r| r.total_loss);
    let checkpoint_dir = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_loss_csv(&rows, &dir.join("loss.csv"))?;
            let ckpt = dir.join("checkpoint");
            let data = CheckpointData {
                seed: cfg.seed,
                schedule: stage2_schedule,
                step: global_step,
                extra: serde_json::to_value(CheckpointExtra { config: cfg.clone() })?,
            };
            save_checkpoint(&ckpt, &store, &data)?;
            Some(ckpt)
        }
        None => None,
    };
    Ok(TrainResult {
        store,
        steps: global_step,
        final_loss,
        rows,
        checkpoint_dir,
    })
}

/// Writes the loss curve: one row per optimizer step.
pub fn write_loss_csv(rows: &[LossRow], path: &Path) -> Result<()> {
    let mut text = String::from("step,stage,lr,map_loss,agent_loss,target_loss,plan_loss,total_loss\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, r.stage, r.lr, r.map_loss, r.agent_loss, r.target_loss, r.plan_loss,
            r.total_loss
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads a checkpoint written by [`train`] together with its config.
pub fn load_trained(ckpt_dir: &Path) -> Result<(ParamStore, TrainConfig)> {
    let (store, data) = load_checkpoint(ckpt_dir)?;
    let extra: CheckpointExtra = serde_json::from_value(data.extra).map_err(|e| {
        Error::Checkpoint(format!("checkpoint is missing its training config: {e}"))
    })?;
    Ok((store, extra.config))
}

/// Deterministic two-agent, two-centerline scene for gradient checking:
/// one agent crosses near the decoder's initial output so the proximity
/// hinge is active, the divider and near boundary keep the direction and
/// boundary terms live, and the route feeds the full pipeline.
pub fn gradcheck_scene(seed: u64) -> Scene {
    let mut rng = derived_rng(seed, "gradcheck");
    let v = rng.gen_range(6.0..9.0);
    let near_x = rng.gen_range(2.0..3.5);
    let near_y = rng.gen_range(0.5..1.2);
    let far_x = rng.gen_range(14.0..20.0);
    let drift = rng.gen_range(-0.05..0.05);
    let horizon = 6;

    let line = |pts: Vec<(f64, f64)>| {
        Polyline::new(pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect()).unwrap()
    };
    let agent = |x: f64, y: f64, vx: f64, vy: f64| AgentTrack {
        current: Pose2::new(Point2::new(x, y), vy.atan2(vx)),
        velocity: Point2::new(vx, vy),
        size: (4.0, 1.8),
        future_gt: (1..=horizon)
            .map(|i| Point2::new(x + vx * TRAJ_DT * i as f64, y + vy * TRAJ_DT * i as f64))
            .collect(),
        category: AgentCategory::Vehicle,
    };

    Scene {
        meta: SceneMeta {
            id: format!("gc{seed:04}"),
            kind: ScenarioKind::Straight,
            allow_no_centerlines: false,
        },
        ego: EgoState {
            pose: Pose2::new(Point2::ZERO, 0.0),
            velocity: Point2::new(v, 0.0),
        },
        agents: vec![
            agent(near_x, near_y, 1.0, -0.4),
            agent(far_x, 3.5, -6.0, 0.0),
        ],
        map: vec![
            MapElement {
                kind: MapKind::LaneCenterline,
                geometry: line(vec![(-10.0, 0.0), (60.0, 0.0)]),
            },
            MapElement {
                kind: MapKind::LaneCenterline,
                geometry: line(vec![(60.0, 3.5), (-10.0, 3.5)]),
            },
            MapElement {
                kind: MapKind::LaneDivider,
                geometry: line(vec![(-10.0, 1.75), (60.0, 1.75)]),
            },
            MapElement {
                kind: MapKind::RoadBoundary,
                geometry: line(vec![(-10.0, -0.8), (60.0, -0.8)]),
            },
            MapElement {
                kind: MapKind::RoadBoundary,
                geometry: line(vec![(-10.0, 5.25), (60.0, 5.25)]),
            },
        ],
        route: line(vec![(-5.0, 0.2), (25.0, -0.3), (60.0, 0.1)]),
        ego_gt: (1..=horizon)
            .map(|i| Point2::new(v * TRAJ_DT * i as f64, drift * i as f64))
            .collect(),
    }
}

/// Model sized for gradient checking: small enough that central differences
/// over every coordinate stay fast.
pub fn gradcheck_model() -> ModelConfig {
    let mut model = ModelConfig::default();
    model.tokens.dim = 8;
    model.tokens.modes = 2;
    model.tokens.max_map = 8;
    model.tokens.max_agents = 4;
    model
}

/// Finite-difference step for [`grad_check`]: small enough that curvature
/// stays negligible, large enough that roundoff in the loss does not
/// dominate the difference.
pub const GRAD_CHECK_EPS: f64 = 3e-5;

/// Central-difference check of the full joint-stage loss on a fresh scene
/// and parameter set derived from `seed`.
pub fn grad_check(seed: u64, par: Parallelism) -> Result<FdReport> {
    let model = gradcheck_model();
    let mut store = ParamStore::new(seed);
    register_model_params(&mut store, &model)?;
    let scene = gradcheck_scene(seed);
    let weights = LossWeights::default();
    finite_diff_check(
        |g, store| {
            scene_loss_graph(g, store, &model, &weights, &scene, PlanMode::TgtPath, TrainStage::Two)
                .map(|vars| vars.total)
        },
        &store,
        GRAD_CHECK_EPS,
        par,
    )
}

/// Median of a nonempty sample (mean of the middle pair for even sizes).
pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty(), "median of empty sample");
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
