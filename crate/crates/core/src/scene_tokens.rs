//! Instance-level scene tokens from ground-truth vectorized scenes: one
//! token per map element and per agent, plus a small multimodal forecast
//! head that gives agent tokens motion content during training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::neural::{
    attention_register, cross_attention, mlp_apply, mlp_register, Graph, ParamStore, Tensor, Var,
};
use crate::objectives::focal_loss_graph;
use crate::scene::{AgentCategory, MapKind, Scene};

/// Feature width of one map-segment row: delta position, segment direction
/// as cos/sin, and the element-kind one-hot.
pub const MAP_FEATURES: usize = 4 + MapKind::ALL.len();

/// Feature width of one agent row: position, velocity, heading cos/sin,
/// box size, and the category one-hot.
pub const AGENT_FEATURES: usize = 8 + AgentCategory::ALL.len();

/// Shared encoder and forecast-head dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenConfig {
    /// Token width d.
    pub dim: usize,
    /// Map-token capacity; farther elements are dropped.
    pub max_map: usize,
    /// Agent-token capacity; farther agents are dropped.
    pub max_agents: usize,
    /// Forecast modes per agent.
    pub modes: usize,
    /// Forecast steps per mode.
    pub horizon: usize,
}

impl Default for TokenConfig {
    fn default() -> Self {
        TokenConfig {
            dim: 64,
            max_map: 16,
            max_agents: 16,
            modes: 6,
            horizon: 6,
        }
    }
}

impl TokenConfig {
    /// Width of the forecast-head output row per agent: all mode
    /// trajectories flattened plus one logit per mode.
    pub fn head_width(&self) -> usize {
        self.modes * (2 * self.horizon + 1)
    }
}

/// Registers the token encoders and the forecast head.
pub fn register_token_params(store: &mut ParamStore, cfg: &TokenConfig) -> Result<()> {
    mlp_register(store, "map_enc", &[MAP_FEATURES, cfg.dim])?;
    mlp_register(store, "agent_enc", &[AGENT_FEATURES, cfg.dim])?;
    attention_register(store, "motion.attn", cfg.dim)?;
    mlp_register(store, "motion.head", &[cfg.dim, cfg.dim, cfg.head_width()])
}

/// Graph-level encoding of one scene: only valid rows are materialized, so
/// downstream attention never mixes in padding.
pub struct EncodedScene {
    /// Map tokens, one row per kept element; `None` when the scene has none.
    pub map: Option<Var>,
    /// Agent tokens, one row per kept agent; `None` when the scene has none.
    pub agents: Option<Var>,
    /// Indices into `scene.map` that survived truncation, in input order.
    pub map_kept: Vec<usize>,
    /// Indices into `scene.agents` that survived truncation, in input order.
    pub agent_kept: Vec<usize>,
}

impl EncodedScene {
    /// Map rows stacked over agent rows; `None` for a scene with neither.
    pub fn combined(&self, g: &mut Graph) -> Option<Var> {
        match (self.map, self.agents) {
            (Some(m), Some(a)) => Some(g.concat_rows(&[m, a])),
            (Some(m), None) => Some(m),
            (None, Some(a)) => Some(a),
            (None, None) => None,
        }
    }
}

/// Keeps the `cap` nearest entries (ties to the lower index) and returns
/// their indices in input order.
fn keep_nearest(distances: &[f64], cap: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .total_cmp(&distances[b])
            .then(a.cmp(&b))
    });
    order.truncate(cap);
    order.sort_unstable();
    order
}

fn map_element_rows(kind: MapKind, points: &[Point2]) -> Vec<f64> {
    let mut rows = Vec::with_capacity((points.len() - 1) * MAP_FEATURES);
    for pair in points.windows(2) {
        let d = pair[1] - pair[0];
        let h = d.y.atan2(d.x);
        rows.extend_from_slice(&[d.x, d.y, h.cos(), h.sin()]);
        for k in MapKind::ALL {
            rows.push(if k == kind { 1.0 } else { 0.0 });
        }
    }
    rows
}

/// Encodes map elements (ego frame): per-segment affine features max-pooled
/// to one token per element. Returns the token rows and the kept indices.
pub fn encode_map_graph(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &TokenConfig,
    scene: &Scene,
) -> Result<(Option<Var>, Vec<usize>)> {
    let ego = scene.ego.pose;
    let in_ego: Vec<_> = scene.map.iter().map(|el| el.to_ego_frame(ego)).collect();
    let distances: Vec<f64> = in_ego
        .iter()
        .map(|el| el.geometry.nearest_point(Point2::ZERO).distance)
        .collect();
    let kept = keep_nearest(&distances, cfg.max_map);
    if kept.is_empty() {
        return Ok((None, kept));
    }
    let mut tokens = Vec::with_capacity(kept.len());
    for &i in &kept {
        let el = &in_ego[i];
        let rows = map_element_rows(el.kind, el.geometry.points());
        let x = g.constant(rows.len() / MAP_FEATURES, MAP_FEATURES, rows);
        let enc = mlp_apply(g, store, "map_enc", 1, x)?;
        tokens.push(g.max_pool_rows(enc));
    }
    Ok((Some(g.concat_rows(&tokens)), kept))
}

fn agent_row(agent: &crate::scene::AgentTrack) -> Vec<f64> {
    let mut row = Vec::with_capacity(AGENT_FEATURES);
    row.extend_from_slice(&[
        agent.current.position.x,
        agent.current.position.y,
        agent.velocity.x,
        agent.velocity.y,
        agent.current.heading.cos(),
        agent.current.heading.sin(),
        agent.size.0,
        agent.size.1,
    ]);
    for c in AgentCategory::ALL {
        row.push(if c == agent.category { 1.0 } else { 0.0 });
    }
    row
}

/// Encodes agents (ego frame) with one affine token per agent.
pub fn encode_agents_graph(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &TokenConfig,
    scene: &Scene,
) -> Result<(Option<Var>, Vec<usize>)> {
    let in_ego = scene.agents_in_ego();
    let distances: Vec<f64> = in_ego.iter().map(|a| a.current.position.norm()).collect();
    let kept = keep_nearest(&distances, cfg.max_agents);
    if kept.is_empty() {
        return Ok((None, kept));
    }
    let mut rows = Vec::with_capacity(kept.len() * AGENT_FEATURES);
    for &i in &kept {
        rows.extend(agent_row(&in_ego[i]));
    }
    let x = g.constant(kept.len(), AGENT_FEATURES, rows);
    let tokens = mlp_apply(g, store, "agent_enc", 1, x)?;
    Ok((Some(tokens), kept))
}

/// Encodes a whole scene into map and agent token rows.
pub fn encode_scene_graph(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &TokenConfig,
    scene: &Scene,
) -> Result<EncodedScene> {
    let (map, map_kept) = encode_map_graph(g, store, cfg, scene)?;
    let (agents, agent_kept) = encode_agents_graph(g, store, cfg, scene)?;
    Ok(EncodedScene {
        map,
        agents,
        map_kept,
        agent_kept,
    })
}

/// Fixed-capacity token matrices with validity masks; padding rows are zero.
#[derive(Debug, Clone)]
pub struct SceneTokens {
    pub map_tokens: Tensor,
    pub agent_tokens: Tensor,
    /// Map rows stacked over agent rows, capacity (max_map + max_agents).
    pub combined: Tensor,
    pub map_mask: Vec<bool>,
    pub agent_mask: Vec<bool>,
}

fn pad_tokens(g: &Graph, tokens: Option<Var>, kept: usize, cap: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; cap * dim];
    if let Some(v) = tokens {
        data[..kept * dim].copy_from_slice(g.value(v));
    }
    Tensor::new(vec![cap, dim], data).expect("padded token shape")
}

/// Value-level scene encoding: runs the graph encoders and pads to the
/// configured capacities.
pub fn encode_scene(store: &ParamStore, cfg: &TokenConfig, scene: &Scene) -> Result<SceneTokens> {
    let mut g = Graph::new();
    let enc = encode_scene_graph(&mut g, store, cfg, scene)?;
    let map_tokens = pad_tokens(&g, enc.map, enc.map_kept.len(), cfg.max_map, cfg.dim);
    let agent_tokens = pad_tokens(&g, enc.agents, enc.agent_kept.len(), cfg.max_agents, cfg.dim);
    let mut combined_data = map_tokens.data().to_vec();
    combined_data.extend_from_slice(agent_tokens.data());
    let combined = Tensor::new(vec![cfg.max_map + cfg.max_agents, cfg.dim], combined_data)?;
    let mut map_mask = vec![false; cfg.max_map];
    for slot in map_mask.iter_mut().take(enc.map_kept.len()) {
        *slot = true;
    }
    let mut agent_mask = vec![false; cfg.max_agents];
    for slot in agent_mask.iter_mut().take(enc.agent_kept.len()) {
        *slot = true;
    }
    Ok(SceneTokens {
        map_tokens,
        agent_tokens,
        combined,
        map_mask,
        agent_mask,
    })
}

/// Forecast-head graph outputs for the kept agents.
pub struct ForecastVars {
    /// [n_agents x modes*2k] trajectory coordinates, mode-major.
    pub points: Var,
    /// [n_agents x modes] softmaxed mode probabilities.
    pub probs: Var,
}

/// One attention round of agent tokens over the combined scene tokens, then
/// the perceptron head; `None` when the scene has no agents.
pub fn forecast_graph(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &TokenConfig,
    enc: &EncodedScene,
) -> Result<Option<ForecastVars>> {
    let Some(agents) = enc.agents else {
        return Ok(None);
    };
    let context = enc.combined(g).expect("agents imply combined tokens");
    let mixed = cross_attention(g, store, "motion.attn", agents, context, context)?;
    let head = mlp_apply(g, store, "motion.head", 2, mixed)?;
    let coord_cols = cfg.modes * 2 * cfg.horizon;
    let points = g.slice_cols(head, 0, coord_cols);
    let logits = g.slice_cols(head, coord_cols, coord_cols + cfg.modes);
    let probs = g.softmax_rows(logits);
    Ok(Some(ForecastVars { points, probs }))
}

/// Multimodal forecast per kept agent: `modes` trajectories of `horizon`
/// ego-frame points plus a probability per mode.
#[derive(Debug, Clone)]
pub struct MotionForecast {
    pub trajectories: Vec<Vec<Vec<Point2>>>,
    pub scores: Vec<Vec<f64>>,
}

/// Value-level forecast for a scene.
pub fn forecast_agents(
    store: &ParamStore,
    cfg: &TokenConfig,
    scene: &Scene,
) -> Result<MotionForecast> {
    let mut g = Graph::new();
    let enc = encode_scene_graph(&mut g, store, cfg, scene)?;
    let Some(fc) = forecast_graph(&mut g, store, cfg, &enc)? else {
        return Ok(MotionForecast {
            trajectories: Vec::new(),
            scores: Vec::new(),
        });
    };
    let n = enc.agent_kept.len();
    let points = g.value(fc.points).to_vec();
    let probs = g.value(fc.probs).to_vec();
    let stride = cfg.modes * 2 * cfg.horizon;
    let mut trajectories = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for a in 0..n {
        let row = &points[a * stride..(a + 1) * stride];
        let mut agent_modes = Vec::with_capacity(cfg.modes);
        for m in 0..cfg.modes {
            let base = m * 2 * cfg.horizon;
            let traj: Vec<Point2> = (0..cfg.horizon)
                .map(|j| Point2::new(row[base + 2 * j], row[base + 2 * j + 1]))
                .collect();
            agent_modes.push(traj);
        }
        trajectories.push(agent_modes);
        scores.push(probs[a * cfg.modes..(a + 1) * cfg.modes].to_vec());
    }
    Ok(MotionForecast {
        trajectories,
        scores,
    })
}

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;

/// Lowest index minimizing the final-point displacement to `gt_end` among
/// the mode endpoints in one flattened coordinate row.
fn min_fde_mode(row: &[f64], modes: usize, horizon: usize, gt_end: Point2) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for m in 0..modes {
        let base = m * 2 * horizon + 2 * (horizon - 1);
        let end = Point2::new(row[base], row[base + 1]);
        let d = end.dist(gt_end);
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    best
}

/// Forecast loss over the kept agents: per agent, the l1 distance of the
/// minimum-final-displacement mode to the ground-truth future plus a focal
/// classification loss with that mode as the positive class, averaged over
/// agents. The mode choice is made on values, so only the selected branch
/// enters the graph.
pub fn motion_loss_graph(
    g: &mut Graph,
    cfg: &TokenConfig,
    fc: &ForecastVars,
    futures: &[Vec<Point2>],
) -> Result<Var> {
    if fc.points.rows != futures.len() {
        return Err(Error::Shape(format!(
            "forecast rows {} vs ground-truth agents {}",
            fc.points.rows,
            futures.len()
        )));
    }
    if futures.is_empty() {
        return Ok(g.scalar(0.0));
    }
    for (i, f) in futures.iter().enumerate() {
        if f.len() != cfg.horizon {
            return Err(Error::Shape(format!(
                "agent {i} future has {} steps, expected {}",
                f.len(),
                cfg.horizon
            )));
        }
    }
    let values = g.value(fc.points).to_vec();
    let stride = cfg.modes * 2 * cfg.horizon;
    let mut per_agent = Vec::with_capacity(futures.len());
    for (a, future) in futures.iter().enumerate() {
        let row = &values[a * stride..(a + 1) * stride];
        let gt_end = *future.last().expect("nonempty future");
        let mode = min_fde_mode(row, cfg.modes, cfg.horizon, gt_end);

        let agent_row = g.slice_rows(fc.points, a, a + 1);
        let base = mode * 2 * cfg.horizon;
        let pred = g.slice_cols(agent_row, base, base + 2 * cfg.horizon);
        let gt_flat: Vec<f64> = future.iter().flat_map(|p| [p.x, p.y]).collect();
        let gt = g.row(&gt_flat);
        let diff = g.sub(pred, gt);
        let abs = g.abs(diff);
        let reg = g.mean_all(abs);

        let prob_row = g.slice_rows(fc.probs, a, a + 1);
        let cls = focal_loss_graph(g, prob_row, mode, FOCAL_GAMMA, FOCAL_ALPHA)?;
        per_agent.push(g.add(reg, cls));
    }
    let total = g.sum_vars(&per_agent);
    Ok(g.scale(total, 1.0 / futures.len() as f64))
}

/// Value-level forecast loss mirroring [`motion_loss_graph`] with plain
/// arithmetic; serves as an independent recomputation route.
pub fn motion_loss(cfg: &TokenConfig, forecast: &MotionForecast, futures: &[Vec<Point2>]) -> Result<f64> {
    if forecast.trajectories.len() != futures.len() {
        return Err(Error::Shape(format!(
            "forecast agents {} vs ground-truth agents {}",
            forecast.trajectories.len(),
            futures.len()
        )));
    }
    if futures.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (a, (agent_modes, future)) in forecast.trajectories.iter().zip(futures).enumerate() {
        if future.len() != cfg.horizon {
            return Err(Error::Shape(format!(
                "future has {} steps, expected {}",
                future.len(),
                cfg.horizon
            )));
        }
        let gt_end = *future.last().expect("nonempty future");
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (m, traj) in agent_modes.iter().enumerate() {
            let d = traj[cfg.horizon - 1].dist(gt_end);
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        let traj = &agent_modes[best];
        let mut reg = 0.0;
        for (p, q) in traj.iter().zip(future) {
            reg += (p.x - q.x).abs() + (p.y - q.y).abs();
        }
        reg /= (2 * cfg.horizon) as f64;

        let scores = &forecast.scores[a];
        let mut cls = 0.0;
        for (m, &p) in scores.iter().enumerate() {
            if m == best {
                cls += -FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * p.ln();
            } else {
                cls += -(1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * (1.0 - p).ln();
            }
        }
        total += reg + cls;
    }
    Ok(total / futures.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Point2, Polyline, Pose2};
    use crate::scene::{
        AgentTrack, EgoState, MapElement, SceneMeta, ScenarioKind, TRAJ_DT,
    };

    fn test_cfg() -> TokenConfig {
        TokenConfig {
            dim: 8,
            max_map: 4,
            max_agents: 3,
            modes: 2,
            horizon: 3,
        }
    }

    fn test_store(cfg: &TokenConfig) -> ParamStore {
        let mut store = ParamStore::new(17);
        register_token_params(&mut store, cfg).unwrap();
        store
    }

    fn agent_at(x: f64, y: f64, horizon: usize) -> AgentTrack {
        AgentTrack {
            current: Pose2::new(Point2::new(x, y), 0.0),
            velocity: Point2::new(3.0, 0.0),
            size: (4.0, 1.8),
            future_gt: (1..=horizon)
                .map(|i| Point2::new(x + 3.0 * TRAJ_DT * i as f64, y))
                .collect(),
            category: AgentCategory::Vehicle,
        }
    }

    fn scene_with(
        map: Vec<MapElement>,
        agents: Vec<AgentTrack>,
        ego: Pose2,
        horizon: usize,
    ) -> Scene {
        let has_centerline = map.iter().any(|el| el.kind == MapKind::LaneCenterline);
        Scene {
            meta: SceneMeta {
                id: "t0".into(),
                kind: ScenarioKind::Straight,
                allow_no_centerlines: !has_centerline,
            },
            ego: EgoState {
                pose: ego,
                velocity: Point2::new(5.0, 0.0),
            },
            agents,
            map,
            route: Polyline::new(vec![Point2::new(-5.0, 0.0), Point2::new(60.0, 0.0)]).unwrap(),
            ego_gt: (1..=horizon)
                .map(|i| Point2::new(5.0 * TRAJ_DT * i as f64, 0.0))
                .collect(),
        }
    }

    fn line(kind: MapKind, pts: Vec<(f64, f64)>) -> MapElement {
        MapElement {
            kind,
            geometry: Polyline::new(pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
                .unwrap(),
        }
    }

    #[test]
    fn empty_scene_yields_zero_tokens_and_masks() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let scene = scene_with(vec![], vec![], Pose2::new(Point2::ZERO, 0.0), cfg.horizon);
        let tokens = encode_scene(&store, &cfg, &scene).unwrap();
        assert!(tokens.map_tokens.data().iter().all(|&v| v == 0.0));
        assert!(tokens.agent_tokens.data().iter().all(|&v| v == 0.0));
        assert!(tokens.map_mask.iter().all(|&m| !m));
        assert!(tokens.agent_mask.iter().all(|&m| !m));
    }

    #[test]
    fn combined_is_exact_row_concat() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let scene = scene_with(
            vec![line(MapKind::LaneCenterline, vec![(0.0, 0.0), (10.0, 0.0)])],
            vec![agent_at(6.0, 2.0, cfg.horizon)],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let tokens = encode_scene(&store, &cfg, &scene).unwrap();
        let mut expected = tokens.map_tokens.data().to_vec();
        expected.extend_from_slice(tokens.agent_tokens.data());
        assert_eq!(tokens.combined.data(), expected.as_slice());
    }

    #[test]
    fn rigid_motion_of_scene_and_ego_preserves_tokens() {
        // Quarter-unit translation of every world coordinate including the
        // ego cancels exactly in the ego-frame subtraction.
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let base_map = vec![
            line(MapKind::LaneCenterline, vec![(0.0, 0.0), (10.0, 0.0)]),
            line(MapKind::RoadBoundary, vec![(0.0, 7.0), (10.0, 7.0)]),
        ];
        let scene = scene_with(
            base_map,
            vec![agent_at(6.0, 2.0, cfg.horizon)],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let offset = Point2::new(12.25, -3.5);
        let mut moved = scene.clone();
        moved.ego.pose = Pose2::new(scene.ego.pose.position + offset, 0.0);
        for el in &mut moved.map {
            el.geometry = el.geometry.transformed(|p| p + offset);
        }
        for a in &mut moved.agents {
            a.current = Pose2::new(a.current.position + offset, a.current.heading);
            for p in &mut a.future_gt {
                *p = *p + offset;
            }
        }
        let t0 = encode_scene(&store, &cfg, &scene).unwrap();
        let t1 = encode_scene(&store, &cfg, &moved).unwrap();
        assert_eq!(t0.combined.data(), t1.combined.data());
    }

    #[test]
    fn map_tokens_match_dense_recomputation() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let scene = scene_with(
            vec![
                line(MapKind::LaneCenterline, vec![(0.0, 0.0), (4.0, 1.0), (9.0, -2.0)]),
                line(MapKind::LaneDivider, vec![(1.0, 3.0), (8.0, 3.5)]),
            ],
            vec![],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let tokens = encode_scene(&store, &cfg, &scene).unwrap();

        let w = store.get("map_enc.0.w").unwrap();
        let b = store.get("map_enc.0.b").unwrap();
        for (e, el) in scene.map.iter().enumerate() {
            let rows = map_element_rows(el.kind, el.geometry.points());
            let nrows = rows.len() / MAP_FEATURES;
            let mut token = vec![f64::NEG_INFINITY; cfg.dim];
            for r in 0..nrows {
                for c in 0..cfg.dim {
                    let mut acc = b.data()[c];
                    for f in 0..MAP_FEATURES {
                        acc += rows[r * MAP_FEATURES + f] * w.data()[f * cfg.dim + c];
                    }
                    token[c] = token[c].max(acc);
                }
            }
            let got = &tokens.map_tokens.data()[e * cfg.dim..(e + 1) * cfg.dim];
            for (a, bb) in got.iter().zip(&token) {
                assert!((a - bb).abs() < 1e-12, "{a} vs {bb}");
            }
        }
    }

    #[test]
    fn reversed_centerline_changes_tokens() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let forward = scene_with(
            vec![line(MapKind::LaneCenterline, vec![(0.0, 0.0), (10.0, 2.0)])],
            vec![],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let reversed = scene_with(
            vec![line(MapKind::LaneCenterline, vec![(10.0, 2.0), (0.0, 0.0)])],
            vec![],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let a = encode_scene(&store, &cfg, &forward).unwrap();
        let b = encode_scene(&store, &cfg, &reversed).unwrap();
        assert_ne!(a.map_tokens.data(), b.map_tokens.data());
    }

    #[test]
    fn identical_agents_share_tokens_and_random_agents_match_recomputation() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let scene = scene_with(
            vec![],
            vec![agent_at(6.0, 2.0, cfg.horizon), agent_at(6.0, 2.0, cfg.horizon)],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let tokens = encode_scene(&store, &cfg, &scene).unwrap();
        let d = cfg.dim;
        assert_eq!(
            &tokens.agent_tokens.data()[0..d],
            &tokens.agent_tokens.data()[d..2 * d]
        );

        let w = store.get("agent_enc.0.w").unwrap();
        let b = store.get("agent_enc.0.b").unwrap();
        let row = agent_row(&scene.agents_in_ego()[0]);
        for c in 0..d {
            let mut acc = b.data()[c];
            for f in 0..AGENT_FEATURES {
                acc += row[f] * w.data()[f * d + c];
            }
            let got = tokens.agent_tokens.data()[c];
            assert!((got - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn agent_permutation_permutes_tokens() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let a0 = agent_at(5.0, 1.0, cfg.horizon);
        let a1 = agent_at(9.0, -2.0, cfg.horizon);
        let a2 = agent_at(12.0, 3.0, cfg.horizon);
        let fwd = scene_with(
            vec![],
            vec![a0.clone(), a1.clone(), a2.clone()],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let rev = scene_with(
            vec![],
            vec![a2, a1, a0],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let tf = encode_scene(&store, &cfg, &fwd).unwrap();
        let tr = encode_scene(&store, &cfg, &rev).unwrap();
        let d = cfg.dim;
        for i in 0..3 {
            assert_eq!(
                &tf.agent_tokens.data()[i * d..(i + 1) * d],
                &tr.agent_tokens.data()[(2 - i) * d..(3 - i) * d]
            );
        }
    }

    #[test]
    fn truncation_keeps_nearest_in_input_order() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        // Four agents, capacity three: the farthest (x=40) must drop, and
        // the kept tokens stay in input order.
        let scene = scene_with(
            vec![],
            vec![
                agent_at(9.0, 0.0, cfg.horizon),
                agent_at(40.0, 0.0, cfg.horizon),
                agent_at(5.0, 0.0, cfg.horizon),
                agent_at(12.0, 0.0, cfg.horizon),
            ],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let mut g = Graph::new();
        let (_, kept) = encode_agents_graph(&mut g, &store, &cfg, &scene).unwrap();
        assert_eq!(kept, vec![0, 2, 3]);
    }

    #[test]
    fn forecast_shapes_and_score_normalization() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let scene = scene_with(
            vec![line(MapKind::LaneCenterline, vec![(0.0, 0.0), (20.0, 0.0)])],
            vec![agent_at(6.0, 2.0, cfg.horizon), agent_at(10.0, -2.0, cfg.horizon)],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let fc = forecast_agents(&store, &cfg, &scene).unwrap();
        assert_eq!(fc.trajectories.len(), 2);
        for (modes, scores) in fc.trajectories.iter().zip(&fc.scores) {
            assert_eq!(modes.len(), cfg.modes);
            assert!(modes.iter().all(|t| t.len() == cfg.horizon));
            assert_eq!(scores.len(), cfg.modes);
            assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(scores.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn zero_head_gives_zero_trajectories_and_uniform_scores() {
        let cfg = test_cfg();
        let mut store = test_store(&cfg);
        for name in ["motion.head.0.w", "motion.head.0.b", "motion.head.1.w", "motion.head.1.b"] {
            let t = store.get_mut(name).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let scene = scene_with(
            vec![],
            vec![agent_at(6.0, 2.0, cfg.horizon)],
            Pose2::new(Point2::ZERO, 0.0),
            cfg.horizon,
        );
        let fc = forecast_agents(&store, &cfg, &scene).unwrap();
        for traj in &fc.trajectories[0] {
            assert!(traj.iter().all(|p| p.x == 0.0 && p.y == 0.0));
        }
        let uniform = 1.0 / cfg.modes as f64;
        for &s in &fc.scores[0] {
            assert!((s - uniform).abs() < 1e-15);
        }
    }

    #[test]
    fn motion_loss_selects_min_fde_mode() {
        let cfg = test_cfg();
        // Hand-built forecast: mode endpoints at distance 1 and 5 from gt.
        let gt = vec![
            Point2::new(1.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(3.0, 0.0),
        ];
        let mode0 = vec![
            Point2::new(1.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(3.0, 1.0),
        ];
        let mode1 = vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 0.0),
            Point2::new(3.0, 5.0),
        ];
        let forecast = MotionForecast {
            trajectories: vec![vec![mode0, mode1]],
            scores: vec![vec![0.5, 0.5]],
        };
        let loss = motion_loss(&cfg, &forecast, &[gt.clone()]).unwrap();
        // Mode 0 selected: its l1 term is |1.0| on one coordinate out of 6.
        let reg = 1.0 / 6.0;
        let p: f64 = 0.5;
        let cls = -FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * p.ln()
            - (1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * (1.0 - p).ln();
        assert!((loss - (reg + cls)).abs() < 1e-12);
    }

    #[test]
    fn exact_mode_match_has_zero_regression() {
        let cfg = test_cfg();
        let gt = vec![
            Point2::new(1.0, 0.5),
            Point2::new(2.0, 1.0),
            Point2::new(3.0, 1.5),
        ];
        let forecast = MotionForecast {
            trajectories: vec![vec![gt.clone(), vec![Point2::new(9.0, 9.0); 3]]],
            scores: vec![vec![0.9, 0.1]],
        };
        let loss = motion_loss(&cfg, &forecast, &[gt]).unwrap();
        let p: f64 = 0.9;
        let q: f64 = 0.1;
        let cls = -FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * p.ln()
            - (1.0 - FOCAL_ALPHA) * q.powf(FOCAL_GAMMA) * (1.0 - q).ln();
        assert!((loss - cls).abs() < 1e-12, "regression part must vanish");
    }

    #[test]
    fn graph_and_value_motion_losses_agree() {
        let cfg = test_cfg();
        let store = test_store(&cfg);
        let scene = scene_with(
            vec![line(MapKind::LaneCenterline, vec![(0.0, 0.0), (20.0, 0.0)])],
            vec![agent_at(6.0, 2.0, cfg.horizon), agent_at(11.0, -1.0, cfg.horizon)],
            Pose2::new(Point2::new(1.0, 0.5), 0.1),
            cfg.horizon,
        );
        let mut g = Graph::new();
        let enc = encode_scene_graph(&mut g, &store, &cfg, &scene).unwrap();
        let fc = forecast_graph(&mut g, &store, &cfg, &enc).unwrap().unwrap();
        let futures: Vec<Vec<Point2>> = enc
            .agent_kept
            .iter()
            .map(|&i| scene.agents_in_ego()[i].future_gt.clone())
            .collect();
        let loss = motion_loss_graph(&mut g, &cfg, &fc, &futures).unwrap();

        let forecast = forecast_agents(&store, &cfg, &scene).unwrap();
        let value = motion_loss(&cfg, &forecast, &futures).unwrap();
        assert!((g.scalar_value(loss) - value).abs() < 1e-12);
    }

    #[test]
    fn motion_loss_empty_agents_is_zero() {
        let cfg = test_cfg();
        let forecast = MotionForecast {
            trajectories: vec![],
            scores: vec![],
        };
        assert_eq!(motion_loss(&cfg, &forecast, &[]).unwrap(), 0.0);
    }
}
