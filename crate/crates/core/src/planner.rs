//! Two-step trajectory planning: sample dense target candidates, score them
//! under a route-conditioned instance feature, pick the best target, then
//! decode the full trajectory conditioned on it. Ablation modes swap the
//! route feature for a command embedding or a single learned embedding, or
//! bypass target selection entirely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{to_ego_frame, Point2};
use crate::navpath::{
    ego_in_window_frame, interpolate_route, select_window, vectorize_window, NavNode, NavWindow,
    NAV_NODE_WIDTH, ROUTE_SPACING_M, WINDOW_NODES,
};
use crate::neural::{
    attention_register, cross_attention, mlp_apply, mlp_register, Graph, ParamStore, Tensor, Var,
};
use crate::scene::{MapKind, PlannedTrajectory, Scene};
use crate::scene_tokens::{encode_scene_graph, register_token_params, EncodedScene, TokenConfig};

/// Planner variants: the full route-conditioned model and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Route window encoded into the instance feature (the full model).
    TgtPath,
    /// Discrete left/straight/right command embedding as the instance feature.
    TgtCmd,
    /// One learned embedding, no route information.
    TgtEmb,
    /// No candidates or target: the instance feature queries the scene
    /// directly and the decoder runs on it alone.
    NoTarget,
}

impl PlanMode {
    pub const ALL: [PlanMode; 4] = [
        PlanMode::TgtPath,
        PlanMode::TgtCmd,
        PlanMode::TgtEmb,
        PlanMode::NoTarget,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            PlanMode::TgtPath => "tgt_path",
            PlanMode::TgtCmd => "tgt_cmd",
            PlanMode::TgtEmb => "tgt_emb",
            PlanMode::NoTarget => "no_target",
        }
    }

    pub fn parse(s: &str) -> Result<PlanMode> {
        PlanMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown plan mode {s:?}")))
    }
}

impl std::fmt::Display for PlanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Candidate sampling geometry, all in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    /// Arclength step between centerline samples, meters.
    pub along_step: f64,
    /// Perpendicular replication offsets per centerline sample, meters.
    pub lateral_offsets: Vec<f64>,
    /// Maximum candidate distance from the ego, meters.
    pub range_m: f64,
    /// Candidates further behind the ego than this are dropped, meters.
    pub behind_m: f64,
    /// Forward fallback grid depth, meters.
    pub fallback_range: f64,
    /// Forward fallback grid half width, meters.
    pub fallback_halfwidth: f64,
    /// Fallback grid pitch, meters.
    pub grid_step: f64,
    /// Hard cap on the candidate count.
    pub max_candidates: usize,
    /// Candidates closer than this to an earlier one are dropped, meters.
    pub dedup_radius: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            along_step: 1.0,
            lateral_offsets: vec![-1.0, 0.0, 1.0],
            range_m: 40.0,
            behind_m: 2.0,
            fallback_range: 30.0,
            fallback_halfwidth: 3.0,
            grid_step: 2.0,
            max_candidates: 256,
            dedup_radius: 0.1,
        }
    }
}

impl CandidateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.along_step <= 0.0 || self.grid_step <= 0.0 {
            return Err(Error::Config("candidate steps must be positive".into()));
        }
        if self.max_candidates == 0 {
            return Err(Error::Config("candidate cap must be at least 1".into()));
        }
        if self.dedup_radius < 0.0 || !self.dedup_radius.is_finite() {
            return Err(Error::Config("dedup radius must be nonnegative".into()));
        }
        if self.lateral_offsets.is_empty() || self.lateral_offsets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("lateral offsets must be finite and nonempty".into()));
        }
        if [
            self.range_m,
            self.behind_m,
            self.fallback_range,
            self.fallback_halfwidth,
        ]
        .iter()
        .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Config("candidate ranges must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Centerline,
    ForwardFallback,
}

/// Dense target candidates in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    coords: Vec<Point2>,
    source: Vec<CandidateSource>,
}

impl CandidateSet {
    pub fn new(coords: Vec<Point2>, source: Vec<CandidateSource>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        if coords.len() != source.len() {
            return Err(Error::Shape(format!(
                "{} candidates vs {} source tags",
                coords.len(),
                source.len()
            )));
        }
        if !coords.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("candidate coordinates"));
        }
        Ok(CandidateSet { coords, source })
    }

    pub fn coords(&self) -> &[Point2] {
        &self.coords
    }

    pub fn sources(&self) -> &[CandidateSource] {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Flat row-major [N x 2] coordinate buffer.
    pub fn flat_coords(&self) -> Vec<f64> {
        self.coords.iter().flat_map(|p| [p.x, p.y]).collect()
    }
}

/// Distance from a candidate to the ego's forward ray (the +x axis in the
/// ego frame); points behind the ego pay their full distance.
fn heading_ray_distance(p: Point2) -> f64 {
    if p.x >= 0.0 {
        p.y.abs()
    } else {
        p.norm()
    }
}

fn within_range(p: Point2, cfg: &CandidateConfig) -> bool {
    p.x >= -cfg.behind_m && p.norm() <= cfg.range_m
}

/// Samples target candidates: points every `along_step` along each
/// centerline (replicated at the lateral offsets), plus a forward fallback
/// grid. Duplicates within `dedup_radius` keep the first occurrence; when
/// over the cap, candidates nearest the ego's forward ray win and the
/// survivors keep their original order.
pub fn sample_candidates(scene: &Scene, cfg: &CandidateConfig) -> Result<CandidateSet> {
    cfg.validate()?;
    let centerlines = scene.map_in_ego(MapKind::LaneCenterline);
    let mut raw: Vec<(Point2, CandidateSource)> = Vec::new();
    for line in &centerlines {
        let cum = line.cumulative_arclength();
        let total = *cum.last().expect("polyline nonempty");
        let pts = line.points();
        let steps = (total / cfg.along_step).floor() as usize;
        let mut seg = 0usize;
        for i in 0..=steps {
            let s = (i as f64 * cfg.along_step).min(total);
            while seg + 1 < cum.len() - 1 && cum[seg + 1] < s {
                seg += 1;
            }
            let seg_vec = pts[seg + 1] - pts[seg];
            let seg_len = cum[seg + 1] - cum[seg];
            let t = ((s - cum[seg]) / seg_len).clamp(0.0, 1.0);
            let base = pts[seg] + seg_vec * t;
            let normal = Point2::new(-seg_vec.y, seg_vec.x) * (1.0 / seg_vec.norm());
            for &w in &cfg.lateral_offsets {
                let c = base + normal * w;
                if within_range(c, cfg) {
                    raw.push((c, CandidateSource::Centerline));
                }
            }
        }
    }
    let mut x = 0.0;
    while x <= cfg.fallback_range + 1e-9 {
        let mut y = -cfg.fallback_halfwidth;
        while y <= cfg.fallback_halfwidth + 1e-9 {
            raw.push((Point2::new(x, y), CandidateSource::ForwardFallback));
            y += cfg.grid_step;
        }
        x += cfg.grid_step;
    }

    let mut coords: Vec<Point2> = Vec::new();
    let mut source: Vec<CandidateSource> = Vec::new();
    for (p, s) in raw {
        if coords.iter().all(|q| q.dist(p) >= cfg.dedup_radius) {
            coords.push(p);
            source.push(s);
        }
    }

    if coords.len() > cfg.max_candidates {
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by(|&a, &b| {
            heading_ray_distance(coords[a])
                .total_cmp(&heading_ray_distance(coords[b]))
                .then(a.cmp(&b))
        });
        order.truncate(cfg.max_candidates);
        order.sort_unstable();
        coords = order.iter().map(|&i| coords[i]).collect();
        source = order.iter().map(|&i| source[i]).collect();
    }

    CandidateSet::new(coords, source)
}

/// Probability over candidates, aligned with a [`CandidateSet`] by index.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    probs: Vec<f64>,
}

impl TargetDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("target distribution"));
        }
        if !probs.iter().all(|p| p.is_finite() && *p >= 0.0) {
            return Err(Error::NonFinite("target probabilities"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "target probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(TargetDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the highest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Coordinates of the most probable candidate.
pub fn select_target(dist: &TargetDistribution, cands: &CandidateSet) -> Result<Point2> {
    if dist.len() != cands.len() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} candidates",
            dist.len(),
            cands.len()
        )));
    }
    Ok(cands.coords()[dist.argmax()])
}

/// Discrete route command derived from accumulated window heading change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Left,
    Straight,
    Right,
}

impl Command {
    pub fn embedding_row(&self) -> usize {
        match self {
            Command::Left => 0,
            Command::Straight => 1,
            Command::Right => 2,
        }
    }
}

/// Accumulated heading-change threshold separating a turn from straight.
pub const COMMAND_TURN_THRESHOLD_RAD: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Classifies the window by total signed heading change across its nodes.
pub fn command_from_window(nodes: &[NavNode]) -> Command {
    let mut total = 0.0;
    for pair in nodes.windows(2) {
        total += crate::geom::normalize_angle(pair[1].heading() - pair[0].heading());
    }
    if total > COMMAND_TURN_THRESHOLD_RAD {
        Command::Left
    } else if total < -COMMAND_TURN_THRESHOLD_RAD {
        Command::Right
    } else {
        Command::Straight
    }
}

/// Whole-model configuration: token encoders plus route and candidate
/// handling. Kept in one place so checkpoints can embed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub tokens: TokenConfig,
    /// Route window length in nodes (window points = nodes + 1).
    pub window_nodes: usize,
    /// Route interpolation spacing, meters.
    pub route_spacing: f64,
    pub candidates: CandidateConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tokens: TokenConfig::default(),
            window_nodes: WINDOW_NODES,
            route_spacing: ROUTE_SPACING_M,
            candidates: CandidateConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        self.tokens.dim
    }

    pub fn horizon(&self) -> usize {
        self.tokens.horizon
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.dim < 2 || self.tokens.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "token width must be even and at least 2, got {}",
                self.tokens.dim
            )));
        }
        if self.tokens.horizon == 0 || self.tokens.modes == 0 {
            return Err(Error::Config("horizon and forecast modes must be positive".into()));
        }
        if self.window_nodes == 0 {
            return Err(Error::Config("route window needs at least one node".into()));
        }
        if !(self.route_spacing.is_finite() && self.route_spacing > 0.0) {
            return Err(Error::Config("route spacing must be positive".into()));
        }
        self.candidates.validate()
    }
}

/// Registers every planner parameter (route encoder, mode embeddings,
/// candidate scorer, completion decoder).
pub fn register_planner_params(store: &mut ParamStore, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.dim();
    let half = d / 2;
    mlp_register(store, "nav.l1", &[NAV_NODE_WIDTH, half])?;
    mlp_register(store, "nav.l2", &[2 * half, half])?;
    mlp_register(store, "nav.ego", &[2, d])?;
    store.add_row_param("mode.embed", d)?;
    store.add_matrix("mode.cmd", 3, d)?;
    mlp_register(store, "score.g1", &[2, d])?;
    mlp_register(store, "score.g2", &[2 * d, d])?;
    mlp_register(store, "score.g3", &[3 * d, 1])?;
    attention_register(store, "score.attn", d)?;
    mlp_register(store, "complete.g4", &[2, d, d])?;
    attention_register(store, "complete.attn", d)?;
    mlp_register(store, "complete.g5", &[2 * d, d, d, 2 * cfg.horizon()])?;
    Ok(())
}

/// Registers the full model: scene/motion parameters plus the planner.
pub fn register_model_params(store: &mut ParamStore, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    register_token_params(store, &cfg.tokens)?;
    register_planner_params(store, cfg)
}

/// True for parameters trained only in the joint stage (route encoder, mode
/// embeddings, target scoring, completion decoder).
pub fn is_planner_param(name: &str) -> bool {
    ["nav.", "mode.", "score.", "complete."]
        .iter()
        .any(|p| name.starts_with(p))
}

/// True for the scene token encoders.
pub fn is_scene_param(name: &str) -> bool {
    name.starts_with("map_enc.") || name.starts_with("agent_enc.")
}

/// True for the motion forecast head.
pub fn is_motion_param(name: &str) -> bool {
    name.starts_with("motion.")
}

/// Route-window instance feature: two stacked rounds of per-node encoding
/// with max-pool context concatenation, pooled and shifted by an encoding
/// of the ego position in the window frame. Output is [1 x d].
pub fn encode_nav_instance_graph(
    g: &mut Graph,
    store: &ParamStore,
    nodes: &[NavNode],
    ego_in_window: Point2,
) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::Empty("navigation nodes"));
    }
    let feats: Vec<f64> = nodes.iter().flat_map(|n| n.features()).collect();
    let mut f = g.constant(nodes.len(), NAV_NODE_WIDTH, feats);
    for layer in ["nav.l1", "nav.l2"] {
        let enc = mlp_apply(g, store, layer, 1, f)?;
        let pooled = g.max_pool_rows(enc);
        let context = g.broadcast_rows(pooled, enc.rows);
        f = g.concat_cols(&[enc, context]);
    }
    let pooled = g.max_pool_rows(f);
    let ego = g.point(ego_in_window);
    let ego_enc = mlp_apply(g, store, "nav.ego", 1, ego)?;
    Ok(g.add(pooled, ego_enc))
}

/// Value-level counterpart of [`encode_nav_instance_graph`].
#[derive(Debug, Clone)]
pub struct NavInstanceFeature {
    pub p: Tensor,
}

pub fn encode_nav_instance(
    store: &ParamStore,
    nodes: &[NavNode],
    ego_in_window: Point2,
) -> Result<NavInstanceFeature> {
    let mut g = Graph::new();
    let var = encode_nav_instance_graph(&mut g, store, nodes, ego_in_window)?;
    Ok(NavInstanceFeature {
        p: g.tensor_value(var),
    })
}

/// Scores candidates against the instance feature and the scene tokens:
/// per-candidate encoding, instance-conditioned mixing, one attention round
/// over the scene, then a softmax over the joint features. Returns the
/// [1 x N] probability row.
pub fn score_candidates_graph(
    g: &mut Graph,
    store: &ParamStore,
    cands: &CandidateSet,
    intent: Var,
    scene_tokens: Var,
) -> Result<Var> {
    let n = cands.len();
    let coords = g.constant(n, 2, cands.flat_coords());
    let f = mlp_apply(g, store, "score.g1", 1, coords)?;
    let p_rows = g.broadcast_rows(intent, n);
    let f_with_p = g.concat_cols(&[f, p_rows]);
    let f1 = mlp_apply(g, store, "score.g2", 1, f_with_p)?;
    let f2 = cross_attention(g, store, "score.attn", f1, scene_tokens, scene_tokens)?;
    let joint = g.concat_cols(&[p_rows, f1, f2]);
    let logits = mlp_apply(g, store, "score.g3", 1, joint)?;
    let row = g.transpose(logits);
    Ok(g.softmax_rows(row))
}

/// Decodes the trajectory for a chosen target: the instance feature is
/// shifted by an encoding of the target, attends over the scene tokens once,
/// and a three-layer head emits the k future points.
pub fn complete_trajectory_graph(
    g: &mut Graph,
    store: &ParamStore,
    horizon: usize,
    target: Point2,
    intent: Var,
    scene_tokens: Var,
) -> Result<Var> {
    if !target.is_finite() {
        return Err(Error::NonFinite("target point"));
    }
    let t = g.point(target);
    let t_enc = mlp_apply(g, store, "complete.g4", 2, t)?;
    let q = g.add(intent, t_enc);
    decode_from_query(g, store, horizon, q, scene_tokens)
}

/// Target-free decoding: the instance feature itself is the query.
pub fn complete_without_target_graph(
    g: &mut Graph,
    store: &ParamStore,
    horizon: usize,
    intent: Var,
    scene_tokens: Var,
) -> Result<Var> {
    decode_from_query(g, store, horizon, intent, scene_tokens)
}

fn decode_from_query(
    g: &mut Graph,
    store: &ParamStore,
    horizon: usize,
    query: Var,
    scene_tokens: Var,
) -> Result<Var> {
    let mixed = cross_attention(g, store, "complete.attn", query, scene_tokens, scene_tokens)?;
    let joint = g.concat_cols(&[query, mixed]);
    let flat = mlp_apply(g, store, "complete.g5", 3, joint)?;
    Ok(g.reshape(flat, horizon, 2))
}

/// Everything the scoring stage needs, built once per scene: encoded scene
/// tokens, the route window, and the mode-resolved instance feature.
pub struct PlanContext {
    pub enc: EncodedScene,
    /// Stacked valid scene tokens.
    pub scene_tokens: Var,
    pub window: NavWindow,
    pub nodes: Vec<NavNode>,
    /// Ego position in the window-local frame.
    pub ego_in_window: Point2,
    pub command: Command,
    /// Mode-resolved instance feature [1 x d].
    pub intent: Var,
}

/// Builds the shared front half of the pipeline for a scene: scene tokens,
/// route window in the ego frame, and the instance feature for `mode`.
/// Fails with an empty-scene error when there is nothing to attend over.
pub fn build_context(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    scene: &Scene,
    mode: PlanMode,
) -> Result<PlanContext> {
    let enc = encode_scene_graph(g, store, &cfg.tokens, scene)?;
    let scene_tokens = enc
        .combined(g)
        .ok_or(Error::Empty("scene tokens (no map elements or agents)"))?;
    let interp = interpolate_route(&scene.route, cfg.route_spacing)?;
    let window_world = select_window(&interp, scene.ego.pose.position, cfg.window_nodes)?;
    let ego_pose = scene.ego.pose;
    let window = window_world.transformed(|p| to_ego_frame(p, ego_pose));
    let nodes = vectorize_window(&window)?;
    let ego_in_window = ego_in_window_frame(&window, Point2::ZERO);
    let command = command_from_window(&nodes);

    let intent = match mode {
        PlanMode::TgtPath | PlanMode::NoTarget => {
            encode_nav_instance_graph(g, store, &nodes, ego_in_window)?
        }
        PlanMode::TgtCmd => {
            let table = g.param(store, "mode.cmd")?;
            let row = command.embedding_row();
            g.slice_rows(table, row, row + 1)
        }
        PlanMode::TgtEmb => g.param(store, "mode.embed")?,
    };
    Ok(PlanContext {
        enc,
        scene_tokens,
        window,
        nodes,
        ego_in_window,
        command,
        intent,
    })
}

/// Full planning result for one scene. Target machinery is absent in
/// [`PlanMode::NoTarget`].
#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub trajectory: PlannedTrajectory,
    pub distribution: Option<TargetDistribution>,
    pub candidates: Option<CandidateSet>,
    pub target: Option<Point2>,
}

/// Runs the whole pipeline for one scene: tokens, window, instance feature,
/// candidate scoring and selection, trajectory decoding. Deterministic for
/// fixed parameters and scene.
pub fn plan(
    store: &ParamStore,
    cfg: &ModelConfig,
    scene: &Scene,
    mode: PlanMode,
) -> Result<PlanOutput> {
    let mut g = Graph::new();
    let ctx = build_context(&mut g, store, cfg, scene, mode)?;
    let (traj_var, distribution, candidates, target) = if mode == PlanMode::NoTarget {
        let traj = complete_without_target_graph(
            &mut g,
            store,
            cfg.horizon(),
            ctx.intent,
            ctx.scene_tokens,
        )?;
        (traj, None, None, None)
    } else {
        let cands = sample_candidates(scene, &cfg.candidates)?;
        let probs =
            score_candidates_graph(&mut g, store, &cands, ctx.intent, ctx.scene_tokens)?;
        let dist = TargetDistribution::new(g.value(probs).to_vec())?;
        let target = select_target(&dist, &cands)?;
        let traj = complete_trajectory_graph(
            &mut g,
            store,
            cfg.horizon(),
            target,
            ctx.intent,
            ctx.scene_tokens,
        )?;
        (traj, Some(dist), Some(cands), Some(target))
    };
    let values = g.value(traj_var);
    let points: Vec<Point2> = values
        .chunks_exact(2)
        .map(|c| Point2::new(c[0], c[1]))
        .collect();
    Ok(PlanOutput {
        trajectory: PlannedTrajectory::new(points)?,
        distribution,
        candidates,
        target,
    })
}

/// Serializable record of one plan: sentinel target and empty candidate
/// list in the target-free mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRecord {
    pub scene_id: String,
    pub mode: PlanMode,
    pub target: (f64, f64),
    /// Up to ten (point, probability) pairs, most probable first.
    pub top_candidates: Vec<RankedCandidate>,
    pub trajectory: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub point: (f64, f64),
    pub prob: f64,
}

impl PlanRecord {
    pub fn from_output(scene_id: &str, mode: PlanMode, out: &PlanOutput) -> PlanRecord {
        let target = out.target.map_or((0.0, 0.0), |t| (t.x, t.y));
        let mut top = Vec::new();
        if let (Some(dist), Some(cands)) = (&out.distribution, &out.candidates) {
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&a, &b| {
                dist.probs()[b]
                    .total_cmp(&dist.probs()[a])
                    .then(a.cmp(&b))
            });
            for &i in order.iter().take(10) {
                let p = cands.coords()[i];
                top.push(RankedCandidate {
                    point: (p.x, p.y),
                    prob: dist.probs()[i],
                });
            }
        }
        PlanRecord {
            scene_id: scene_id.to_string(),
            mode,
            target,
            top_candidates: top,
            trajectory: out.trajectory.points().iter().map(|p| (p.x, p.y)).collect(),
        }
    }
}
