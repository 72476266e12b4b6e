//! Training objectives: target-probability cross-entropy, the four planning
//! penalty terms and their weighted sum, focal classification loss, and the
//! staged overall loss.
//!
//! Each term exists twice: a `_graph` builder used during training, and a
//! plain-arithmetic function that serves as its independent recomputation.
//! Hard choices (nearest agent, nearest boundary segment, nearest divider
//! segment, labeled candidate) are made on values, so the tape records only
//! the selected branch; this leaves a correct gradient almost everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Polyline};
use crate::neural::{Graph, Var};
use crate::planner::CandidateSet;
use crate::scene::{AgentTrack, PlannedTrajectory};

/// Hinge activation distance for the agent-clearance penalty, meters.
pub const ALPHA_COLLISION_M: f64 = 3.0;
/// Hinge activation distance for the boundary-clearance penalty, meters.
pub const ALPHA_BOUNDARY_M: f64 = 1.0;
/// Probability floor/ceiling inside the target cross-entropy.
pub const BCE_PROB_CLAMP: f64 = 1e-7;

/// Weights of the planning terms, the overall stage mix, and the hinge
/// thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Agent-clearance weight.
    pub w_col: f64,
    /// Boundary-clearance weight.
    pub w_bd: f64,
    /// Divider-alignment weight.
    pub w_dir: f64,
    /// Ground-truth regression weight.
    pub w_reg: f64,
    /// Map-loss coefficient in the overall mix (inert here: no map decoder).
    pub w_map: f64,
    /// Forecast-loss coefficient in the overall mix.
    pub w_agent: f64,
    /// Target-score coefficient (joint stage only).
    pub w_target: f64,
    /// Planning-loss coefficient (joint stage only).
    pub w_plan: f64,
    pub alpha_col: f64,
    pub alpha_bd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_col: 1.0,
            w_bd: 1.0,
            w_dir: 0.5,
            w_reg: 1.0,
            w_map: 1.0,
            w_agent: 0.25,
            w_target: 0.2,
            w_plan: 1.0,
            alpha_col: ALPHA_COLLISION_M,
            alpha_bd: ALPHA_BOUNDARY_M,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_col,
            self.w_bd,
            self.w_dir,
            self.w_reg,
            self.w_map,
            self.w_agent,
            self.w_target,
            self.w_plan,
            self.alpha_col,
            self.alpha_bd,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Training stage: the first trains scene encoding and the forecast head
/// only; the second trains every module jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainStage {
    One,
    Two,
}

impl TrainStage {
    /// Coefficients (map, agent, target, plan) for the overall mix.
    pub fn coefficients(self, w: &LossWeights) -> (f64, f64, f64, f64) {
        match self {
            TrainStage::One => (w.w_map, w.w_agent, 0.0, 0.0),
            TrainStage::Two => (w.w_map, w.w_agent, w.w_target, w.w_plan),
        }
    }
}

// ---- target labeling and cross-entropy ----

/// One-hot label over candidates: 1 at the candidate nearest the
/// ground-truth endpoint (lowest index on ties), 0 elsewhere.
pub fn target_label(cands: &CandidateSet, gt_endpoint: Point2) -> Vec<f64> {
    let coords = cands.coords();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in coords.iter().enumerate() {
        let d = c.dist(gt_endpoint);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    let mut label = vec![0.0; coords.len()];
    label[best] = 1.0;
    label
}

/// Mean binary cross-entropy between candidate probabilities and a 0/1
/// label vector, probabilities clamped away from the log singularities.
pub fn target_bce(probs: &[f64], label: &[f64]) -> Result<f64> {
    if probs.len() != label.len() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            label.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Empty("target cross-entropy input"));
    }
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(label) {
        let p = p.clamp(BCE_PROB_CLAMP, 1.0 - BCE_PROB_CLAMP);
        total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    Ok(total / probs.len() as f64)
}

/// Tape version of [`target_bce`] over a `[1 x N]` probability row.
pub fn target_bce_graph(g: &mut Graph, probs: Var, label: &[f64]) -> Result<Var> {
    if probs.len() != label.len() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            label.len()
        )));
    }
    if label.is_empty() {
        return Err(Error::Empty("target cross-entropy input"));
    }
    let y = g.constant(probs.rows, probs.cols, label.to_vec());
    let p = g.clamp(probs, BCE_PROB_CLAMP, 1.0 - BCE_PROB_CLAMP);
    let log_p = g.log(p);
    let neg_p = g.neg(p);
    let one_minus_p = g.add_const(neg_p, 1.0);
    let log_1mp = g.log(one_minus_p);
    let neg_y = g.neg(y);
    let one_minus_y = g.add_const(neg_y, 1.0);
    let pos = g.mul(y, log_p);
    let negv = g.mul(one_minus_y, log_1mp);
    let sum = g.add(pos, negv);
    let mean = g.mean_all(sum);
    Ok(g.neg(mean))
}

// ---- planning penalty terms ----

/// Agent-clearance hinge: sum over steps of max(0, alpha - d) where d is
/// the distance from the plan point to the nearest agent center at that
/// step. Zero without agents.
pub fn collision_term(traj: &PlannedTrajectory, agents: &[AgentTrack], alpha_col: f64) -> f64 {
    let mut total = 0.0;
    for (i, p) in traj.points().iter().enumerate() {
        let mut d = f64::INFINITY;
        for a in agents {
            if let Some(q) = a.future_gt.get(i) {
                d = d.min(p.dist(*q));
            }
        }
        if d < alpha_col {
            total += alpha_col - d;
        }
    }
    total
}

/// Tape version of [`collision_term`] over a `[k x 2]` trajectory node.
/// The nearest agent per step is chosen on values; steps already clear of
/// the hinge contribute no nodes (their value and gradient are exactly 0).
pub fn collision_term_graph(
    g: &mut Graph,
    traj: Var,
    agent_futures: &[Vec<Point2>],
    alpha_col: f64,
) -> Result<Var> {
    if traj.cols != 2 {
        return Err(Error::Shape(format!("trajectory is {}x{}", traj.rows, traj.cols)));
    }
    let values = g.value(traj).to_vec();
    let mut active = Vec::new();
    for i in 0..traj.rows {
        let p = Point2::new(values[2 * i], values[2 * i + 1]);
        let mut best: Option<(f64, Point2)> = None;
        for f in agent_futures {
            if let Some(q) = f.get(i) {
                let d2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
                if best.map_or(true, |(bd, _)| d2 < bd) {
                    best = Some((d2, *q));
                }
            }
        }
        let Some((d2, q)) = best else { continue };
        if d2.sqrt() >= alpha_col {
            continue;
        }
        let prow = g.slice_rows(traj, i, i + 1);
        let qrow = g.point(q);
        let diff = g.sub(prow, qrow);
        let sq = g.mul(diff, diff);
        let s = g.sum_all(sq);
        let d = g.sqrt(s);
        let neg_d = g.neg(d);
        let margin = g.add_const(neg_d, alpha_col);
        active.push(g.relu(margin));
    }
    if active.is_empty() {
        return Ok(g.scalar(0.0));
    }
    Ok(g.sum_vars(&active))
}

/// Boundary-clearance hinge: sum over steps of max(0, alpha - d) where d is
/// the distance from the plan point to the nearest boundary polyline. Zero
/// without boundaries.
pub fn boundary_term(traj: &PlannedTrajectory, boundaries: &[Polyline], alpha_bd: f64) -> f64 {
    let mut total = 0.0;
    for p in traj.points() {
        let mut d = f64::INFINITY;
        for b in boundaries {
            d = d.min(b.nearest_point(*p).distance);
        }
        if d < alpha_bd {
            total += alpha_bd - d;
        }
    }
    total
}

/// Tape version of [`boundary_term`]. The nearest boundary and its foot
/// point are found on values; the foot then enters the graph as a constant,
/// which leaves the distance gradient exact in both the perpendicular and
/// endpoint regimes.
pub fn boundary_term_graph(
    g: &mut Graph,
    traj: Var,
    boundaries: &[Polyline],
    alpha_bd: f64,
) -> Result<Var> {
    if traj.cols != 2 {
        return Err(Error::Shape(format!("trajectory is {}x{}", traj.rows, traj.cols)));
    }
    let values = g.value(traj).to_vec();
    let mut active = Vec::new();
    for i in 0..traj.rows {
        let p = Point2::new(values[2 * i], values[2 * i + 1]);
        let mut best: Option<(f64, Point2)> = None;
        for b in boundaries {
            let near = b.nearest_point(p);
            if best.map_or(true, |(bd, _)| near.distance < bd) {
                best = Some((near.distance, near.foot));
            }
        }
        let Some((d, foot)) = best else { continue };
        if d >= alpha_bd {
            continue;
        }
        let prow = g.slice_rows(traj, i, i + 1);
        let frow = g.point(foot);
        let diff = g.sub(prow, frow);
        let sq = g.mul(diff, diff);
        let s = g.sum_all(sq);
        let dist = g.sqrt(s);
        let neg_d = g.neg(dist);
        let margin = g.add_const(neg_d, alpha_bd);
        active.push(g.relu(margin));
    }
    if active.is_empty() {
        return Ok(g.scalar(0.0));
    }
    Ok(g.sum_vars(&active))
}

/// Nearest divider segment to `mid` across all dividers, by midpoint
/// distance; returns the segment vector. Iteration order breaks ties.
fn nearest_divider_segment(dividers: &[Polyline], mid: Point2) -> Option<Point2> {
    let mut best: Option<(f64, Point2)> = None;
    for div in dividers {
        let pts = div.points();
        for w in pts.windows(2) {
            let seg_mid = (w[0] + w[1]) * 0.5;
            let d2 = (mid.x - seg_mid.x).powi(2) + (mid.y - seg_mid.y).powi(2);
            if best.map_or(true, |(bd, _)| d2 < bd) {
                best = Some((d2, w[1] - w[0]));
            }
        }
    }
    best.map(|(_, v)| v)
}

/// Divider-alignment penalty: mean over trajectory segments of the
/// direction-agnostic angle (folded to [0, pi/2]) between the segment and
/// its nearest divider segment. Zero-length segments are skipped; zero
/// without dividers.
pub fn direction_term(traj: &PlannedTrajectory, dividers: &[Polyline]) -> f64 {
    let pts = traj.points();
    let mut total = 0.0;
    let mut count = 0usize;
    for w in pts.windows(2) {
        let u = w[1] - w[0];
        if u.x == 0.0 && u.y == 0.0 {
            continue;
        }
        let mid = (w[0] + w[1]) * 0.5;
        let Some(v) = nearest_divider_segment(dividers, mid) else {
            continue;
        };
        let cross = (u.x * v.y - u.y * v.x).abs();
        let dot = (u.x * v.x + u.y * v.y).abs();
        total += cross.atan2(dot);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Tape version of [`direction_term`]. Divider segments are constants; only
/// the plan enters differentiably.
pub fn direction_term_graph(g: &mut Graph, traj: Var, dividers: &[Polyline]) -> Result<Var> {
    if traj.cols != 2 {
        return Err(Error::Shape(format!("trajectory is {}x{}", traj.rows, traj.cols)));
    }
    let values = g.value(traj).to_vec();
    let mut angles = Vec::new();
    for i in 0..traj.rows.saturating_sub(1) {
        let a = Point2::new(values[2 * i], values[2 * i + 1]);
        let b = Point2::new(values[2 * i + 2], values[2 * i + 3]);
        let u = b - a;
        if u.x == 0.0 && u.y == 0.0 {
            continue;
        }
        let mid = (a + b) * 0.5;
        let Some(v) = nearest_divider_segment(dividers, mid) else {
            continue;
        };
        let pa = g.slice_rows(traj, i, i + 1);
        let pb = g.slice_rows(traj, i + 1, i + 2);
        let useg = g.sub(pb, pa);
        let ux = g.slice_cols(useg, 0, 1);
        let uy = g.slice_cols(useg, 1, 2);
        let ux_vy = g.scale(ux, v.y);
        let uy_vx = g.scale(uy, v.x);
        let cross = g.sub(ux_vy, uy_vx);
        let ux_vx = g.scale(ux, v.x);
        let uy_vy = g.scale(uy, v.y);
        let dot = g.add(ux_vx, uy_vy);
        let across = g.abs(cross);
        let adot = g.abs(dot);
        angles.push(g.atan2(across, adot));
    }
    if angles.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let total = g.sum_vars(&angles);
    Ok(g.scale(total, 1.0 / angles.len() as f64))
}

/// Mean absolute coordinate error between the plan and the ground truth.
pub fn regression_term(traj: &PlannedTrajectory, gt: &[Point2]) -> Result<f64> {
    let pts = traj.points();
    if pts.len() != gt.len() {
        return Err(Error::Shape(format!(
            "plan has {} points, ground truth {}",
            pts.len(),
            gt.len()
        )));
    }
    let total: f64 = pts
        .iter()
        .zip(gt)
        .map(|(p, q)| (p.x - q.x).abs() + (p.y - q.y).abs())
        .sum();
    Ok(total / (2 * pts.len()) as f64)
}

/// Tape version of [`regression_term`].
pub fn regression_term_graph(g: &mut Graph, traj: Var, gt: &[Point2]) -> Result<Var> {
    if traj.cols != 2 || traj.rows != gt.len() {
        return Err(Error::Shape(format!(
            "plan is {}x{}, ground truth has {} points",
            traj.rows,
            traj.cols,
            gt.len()
        )));
    }
    let flat: Vec<f64> = gt.iter().flat_map(|p| [p.x, p.y]).collect();
    let gtv = g.constant(traj.rows, 2, flat);
    let diff = g.sub(traj, gtv);
    let abs = g.abs(diff);
    Ok(g.mean_all(abs))
}

/// The four planning penalties as plain numbers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanningTerms {
    pub collision: f64,
    pub boundary: f64,
    pub direction: f64,
    pub regression: f64,
}

/// The four planning penalties as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct PlanningTermVars {
    pub collision: Var,
    pub boundary: Var,
    pub direction: Var,
    pub regression: Var,
}

/// Weighted sum of the planning penalties.
pub fn planning_loss(terms: &PlanningTerms, w: &LossWeights) -> f64 {
    w.w_col * terms.collision
        + w.w_bd * terms.boundary
        + w.w_dir * terms.direction
        + w.w_reg * terms.regression
}

/// Tape version of [`planning_loss`].
pub fn planning_loss_graph(g: &mut Graph, terms: &PlanningTermVars, w: &LossWeights) -> Var {
    let col = g.scale(terms.collision, w.w_col);
    let bd = g.scale(terms.boundary, w.w_bd);
    let dir = g.scale(terms.direction, w.w_dir);
    let reg = g.scale(terms.regression, w.w_reg);
    let a = g.add(col, bd);
    let b = g.add(dir, reg);
    g.add(a, b)
}

// ---- classification ----

/// Focal loss over a probability vector with one positive class:
/// -alpha (1-p)^gamma log p for the positive entry plus the mirrored
/// negative-class terms for the rest.
pub fn focal_loss(probs: &[f64], positive: usize, gamma: f64, alpha: f64) -> Result<f64> {
    if positive >= probs.len() {
        return Err(Error::Config(format!(
            "positive index {positive} out of {} classes",
            probs.len()
        )));
    }
    let mut total = 0.0;
    for (m, &p) in probs.iter().enumerate() {
        if m == positive {
            total += -alpha * (1.0 - p).powf(gamma) * p.ln();
        } else {
            total += -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln();
        }
    }
    Ok(total)
}

/// Tape version of [`focal_loss`] over a `[1 x n]` probability row.
pub fn focal_loss_graph(
    g: &mut Graph,
    probs: Var,
    positive: usize,
    gamma: f64,
    alpha: f64,
) -> Result<Var> {
    if probs.rows != 1 || probs.cols == 0 {
        return Err(Error::Shape(format!(
            "focal loss expects one probability row, got {}x{}",
            probs.rows, probs.cols
        )));
    }
    if positive >= probs.cols {
        return Err(Error::Config(format!(
            "positive index {positive} out of {} classes",
            probs.cols
        )));
    }
    let mut terms = Vec::with_capacity(probs.cols);
    for m in 0..probs.cols {
        let p = g.slice_cols(probs, m, m + 1);
        let neg_p = g.neg(p);
        let one_minus_p = g.add_const(neg_p, 1.0);
        let term = if m == positive {
            let focus = g.powf(one_minus_p, gamma);
            let lp = g.log(p);
            let prod = g.mul(focus, lp);
            g.scale(prod, -alpha)
        } else {
            let focus = g.powf(p, gamma);
            let lp = g.log(one_minus_p);
            let prod = g.mul(focus, lp);
            g.scale(prod, -(1.0 - alpha))
        };
        terms.push(term);
    }
    Ok(g.sum_vars(&terms))
}

// ---- overall mix ----

/// Staged weighted sum of the four module losses. Absent terms count as 0.
pub fn overall_loss(
    map_loss: f64,
    agent_loss: f64,
    target_loss: f64,
    plan_loss: f64,
    stage: TrainStage,
    w: &LossWeights,
) -> f64 {
    let (cm, ca, ct, cp) = stage.coefficients(w);
    cm * map_loss + ca * agent_loss + ct * target_loss + cp * plan_loss
}

/// Tape version of [`overall_loss`]. Terms whose stage coefficient is zero
/// are left out of the graph entirely, so the modules they cover receive no
/// gradient and therefore no optimizer update of any kind.
pub fn overall_loss_graph(
    g: &mut Graph,
    map_loss: Option<Var>,
    agent_loss: Option<Var>,
    target_loss: Option<Var>,
    plan_loss: Option<Var>,
    stage: TrainStage,
    w: &LossWeights,
) -> Var {
    let (cm, ca, ct, cp) = stage.coefficients(w);
    let mut terms = Vec::new();
    for (coeff, term) in [
        (cm, map_loss),
        (ca, agent_loss),
        (ct, target_loss),
        (cp, plan_loss),
    ] {
        if coeff > 0.0 {
            if let Some(v) = term {
                terms.push(g.scale(v, coeff));
            }
        }
    }
    if terms.is_empty() {
        return g.scalar(0.0);
    }
    g.sum_vars(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{ParamStore, Tensor};
    use crate::planner::{CandidateSet, CandidateSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cands(points: Vec<(f64, f64)>) -> CandidateSet {
        let n = points.len();
        CandidateSet::new(
            points.into_iter().map(|(x, y)| Point2::new(x, y)).collect(),
            vec![CandidateSource::Centerline; n],
        )
        .unwrap()
    }

    fn traj(points: Vec<(f64, f64)>) -> PlannedTrajectory {
        PlannedTrajectory::new(points.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
            .unwrap()
    }

    fn agent_with_future(points: Vec<(f64, f64)>) -> AgentTrack {
        use crate::geom::Pose2;
        use crate::scene::AgentCategory;
        AgentTrack {
            current: Pose2::new(Point2::new(points[0].0, points[0].1), 0.0),
            velocity: Point2::ZERO,
            size: (4.0, 1.8),
            future_gt: points.into_iter().map(|(x, y)| Point2::new(x, y)).collect(),
            category: AgentCategory::Vehicle,
        }
    }

    fn line(points: Vec<(f64, f64)>) -> Polyline {
        Polyline::new(points.into_iter().map(|(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    fn traj_var(g: &mut Graph, t: &PlannedTrajectory) -> Var {
        let flat: Vec<f64> = t.points().iter().flat_map(|p| [p.x, p.y]).collect();
        g.constant(t.points().len(), 2, flat)
    }

    #[test]
    fn label_hits_exact_candidate() {
        let c = cands(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 1.0)]);
        let label = target_label(&c, Point2::new(3.0, 1.0));
        assert_eq!(label, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn label_tie_takes_lower_index() {
        let c = cands(vec![(-1.0, 0.0), (1.0, 0.0)]);
        let label = target_label(&c, Point2::ZERO);
        assert_eq!(label, vec![1.0, 0.0]);
    }

    #[test]
    fn label_matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(1..20);
            let pts: Vec<Point2> = (0..n)
                .map(|_| Point2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            let gt = Point2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let c = CandidateSet::new(pts.clone(), vec![CandidateSource::Centerline; n]).unwrap();
            let label = target_label(&c, gt);
            let by_scan = pts
                .iter()
                .enumerate()
                .min_by(|(i, a), (j, b)| a.dist(gt).total_cmp(&b.dist(gt)).then(i.cmp(j)))
                .unwrap()
                .0;
            assert_eq!(label.iter().position(|&v| v == 1.0).unwrap(), by_scan);
        }
    }

    #[test]
    fn bce_uniform_closed_form() {
        let probs = [0.25; 4];
        let label = [1.0, 0.0, 0.0, 0.0];
        let got = target_bce(&probs, &label).unwrap();
        let expected = -(0.25f64.ln() + 3.0 * 0.75f64.ln()) / 4.0;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn bce_on_perfect_prediction_is_near_zero() {
        let probs = [1.0, 0.0, 0.0];
        let label = [1.0, 0.0, 0.0];
        let got = target_bce(&probs, &label).unwrap();
        assert!(got > 0.0 && got < 1e-6, "{got}");
    }

    #[test]
    fn bce_decreases_as_mass_moves_to_label() {
        let label = [1.0, 0.0];
        let worse = target_bce(&[0.3, 0.7], &label).unwrap();
        let better = target_bce(&[0.8, 0.2], &label).unwrap();
        assert!(better < worse);
    }

    #[test]
    fn bce_graph_matches_value_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(2..12);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let mut label = vec![0.0; n];
            label[rng.gen_range(0..n)] = 1.0;
            let mut g = Graph::new();
            let pv = g.row(&probs);
            let lv = target_bce_graph(&mut g, pv, &label).unwrap();
            let value = target_bce(&probs, &label).unwrap();
            assert!((g.scalar_value(lv) - value).abs() < 1e-12);
        }
    }

    #[test]
    fn collision_zero_beyond_threshold() {
        let t = traj(vec![(1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        let a = agent_with_future(vec![(1.0, 3.0), (2.0, 3.5), (3.0, 4.0)]);
        assert_eq!(collision_term(&t, &[a], ALPHA_COLLISION_M), 0.0);
    }

    #[test]
    fn collision_single_violation_arithmetic() {
        let t = traj(vec![(0.0, 0.0), (1.0, 0.0)]);
        let a = agent_with_future(vec![(0.0, 10.0), (1.0, 2.0)]);
        let got = collision_term(&t, &[a], 3.0);
        assert!((got - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collision_graph_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let k = rng.gen_range(2..7);
            let t = PlannedTrajectory::new(
                (0..k)
                    .map(|_| Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                    .collect(),
            )
            .unwrap();
            let agents: Vec<AgentTrack> = (0..rng.gen_range(0..4))
                .map(|_| {
                    agent_with_future(
                        (0..k)
                            .map(|_| (rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)))
                            .collect(),
                    )
                })
                .collect();
            let futures: Vec<Vec<Point2>> =
                agents.iter().map(|a| a.future_gt.clone()).collect();
            let value = collision_term(&t, &agents, 3.0);
            let mut g = Graph::new();
            let tv = traj_var(&mut g, &t);
            let node = collision_term_graph(&mut g, tv, &futures, 3.0).unwrap();
            assert!((g.scalar_value(node) - value).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_zero_beyond_threshold_and_hinge_value() {
        let b = line(vec![(-10.0, 2.0), (10.0, 2.0)]);
        let clear = traj(vec![(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(boundary_term(&clear, &[b.clone()], 1.0), 0.0);
        let near = traj(vec![(0.0, 1.6), (5.0, 0.0)]);
        let got = boundary_term(&near, &[b], 1.0);
        assert!((got - 0.6).abs() < 1e-12);
    }

    #[test]
    fn boundary_graph_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let boundaries = vec![
            line(vec![(-10.0, 3.0), (0.0, 3.5), (10.0, 3.0)]),
            line(vec![(-10.0, -3.0), (10.0, -3.0)]),
        ];
        for _ in 0..100 {
            let k = rng.gen_range(2..7);
            let t = PlannedTrajectory::new(
                (0..k)
                    .map(|_| Point2::new(rng.gen_range(-9.0..9.0), rng.gen_range(-4.0..4.0)))
                    .collect(),
            )
            .unwrap();
            let value = boundary_term(&t, &boundaries, 1.0);
            let mut g = Graph::new();
            let tv = traj_var(&mut g, &t);
            let node = boundary_term_graph(&mut g, tv, &boundaries, 1.0).unwrap();
            assert!((g.scalar_value(node) - value).abs() < 1e-12);
        }
    }

    #[test]
    fn direction_parallel_and_perpendicular() {
        let divider = line(vec![(-10.0, 1.0), (10.0, 1.0)]);
        let parallel = traj(vec![(0.0, 0.0), (2.0, 0.0), (4.0, 0.0)]);
        assert_eq!(direction_term(&parallel, &[divider.clone()]), 0.0);
        let perp = traj(vec![(0.0, 0.0), (0.0, 2.0)]);
        let got = direction_term(&perp, &[divider]);
        assert!((got - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn direction_antiparallel_not_penalized() {
        let divider = line(vec![(-10.0, 1.0), (10.0, 1.0)]);
        let reversed = traj(vec![(4.0, 0.0), (2.0, 0.0)]);
        assert_eq!(direction_term(&reversed, &[divider]), 0.0);
    }

    #[test]
    fn direction_graph_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dividers = vec![
            line(vec![(-10.0, 1.75), (0.0, 2.0), (10.0, 1.75)]),
            line(vec![(-10.0, -1.75), (10.0, -1.75)]),
        ];
        for _ in 0..100 {
            let k = rng.gen_range(2..7);
            let t = PlannedTrajectory::new(
                (0..k)
                    .map(|_| Point2::new(rng.gen_range(-9.0..9.0), rng.gen_range(-3.0..3.0)))
                    .collect(),
            )
            .unwrap();
            let value = direction_term(&t, &dividers);
            let mut g = Graph::new();
            let tv = traj_var(&mut g, &t);
            let node = direction_term_graph(&mut g, tv, &dividers).unwrap();
            assert!((g.scalar_value(node) - value).abs() < 1e-12);
        }
    }

    #[test]
    fn regression_exact_and_offset() {
        let t = traj(vec![(1.0, 0.0), (2.0, 0.0)]);
        let gt = vec![Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)];
        assert_eq!(regression_term(&t, &gt).unwrap(), 0.0);
        let off = traj(vec![(2.0, 0.0), (3.0, 0.0)]);
        assert!((regression_term(&off, &gt).unwrap() - 0.5).abs() < 1e-15);
        let short = vec![Point2::new(1.0, 0.0)];
        assert!(regression_term(&t, &short).is_err());
    }

    #[test]
    fn regression_graph_matches_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.gen_range(1..8);
            let t = PlannedTrajectory::new(
                (0..k)
                    .map(|_| Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                    .collect(),
            )
            .unwrap();
            let gt: Vec<Point2> = (0..k)
                .map(|_| Point2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let value = regression_term(&t, &gt).unwrap();
            let mut g = Graph::new();
            let tv = traj_var(&mut g, &t);
            let node = regression_term_graph(&mut g, tv, &gt).unwrap();
            assert!((g.scalar_value(node) - value).abs() < 1e-12);
        }
    }

    #[test]
    fn planning_loss_weighting() {
        let w = LossWeights::default();
        let zero = PlanningTerms::default();
        assert_eq!(planning_loss(&zero, &w), 0.0);
        let col_only = PlanningTerms {
            collision: 1.0,
            ..Default::default()
        };
        assert_eq!(planning_loss(&col_only, &w), 1.0);
        let dir_only = PlanningTerms {
            direction: 2.0,
            ..Default::default()
        };
        assert_eq!(planning_loss(&dir_only, &w), 1.0);
    }

    #[test]
    fn focal_limit_and_degeneration() {
        let nearly_sure = [0.999_999, 1e-6];
        let loss = focal_loss(&nearly_sure, 0, 2.0, 0.25).unwrap();
        assert!(loss < 1e-10, "{loss}");

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let pos = rng.gen_range(0..n);
            let degen = focal_loss(&probs, pos, 0.0, 1.0).unwrap();
            let ce = -probs[pos].ln();
            assert!((degen - ce).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_graph_matches_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let pos = rng.gen_range(0..n);
            let value = focal_loss(&probs, pos, 2.0, 0.25).unwrap();
            let mut g = Graph::new();
            let pv = g.row(&probs);
            let node = focal_loss_graph(&mut g, pv, pos, 2.0, 0.25).unwrap();
            assert!((g.scalar_value(node) - value).abs() < 1e-12);
        }
    }

    #[test]
    fn overall_stage_weighting() {
        let w = LossWeights::default();
        assert_eq!(overall_loss(0.0, 0.0, 0.0, 5.0, TrainStage::One, &w), 0.0);
        assert!((overall_loss(0.0, 0.0, 1.0, 0.0, TrainStage::Two, &w) - 0.2).abs() < 1e-15);
        assert!((overall_loss(0.0, 4.0, 0.0, 0.0, TrainStage::Two, &w) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stage_one_backward_leaves_plan_params_at_exact_zero() {
        // A parameter that feeds only the planning loss must get an exactly
        // zero gradient in the first stage (the term is absent from the
        // graph), so the optimizer will not touch it at all.
        let mut store = ParamStore::new(0);
        store
            .insert(
                "plan_only",
                Tensor::new(vec![2], vec![0.3, -0.4]).unwrap().with_grad(),
            )
            .unwrap();
        store
            .insert(
                "motion_only",
                Tensor::new(vec![1], vec![0.7]).unwrap().with_grad(),
            )
            .unwrap();
        let w = LossWeights::default();
        let mut g = Graph::new();
        let pp = g.param(&store, "plan_only").unwrap();
        let sq = g.mul(pp, pp);
        let plan_loss = g.sum_all(sq);
        let mp = g.param(&store, "motion_only").unwrap();
        let agent_loss = g.sum_all(mp);
        let loss = overall_loss_graph(
            &mut g,
            None,
            Some(agent_loss),
            None,
            Some(plan_loss),
            TrainStage::One,
            &w,
        );
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("plan_only").unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get("motion_only").unwrap().data(), &[0.25]);
    }
}
