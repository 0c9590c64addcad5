//! The joint energy: agent-specific scores, pairwise safety, and goal terms.
//!
//! The agent term is a linear model over hand-crafted per-candidate features,
//! so the whole pipeline stays differentiable in the weight vector. The
//! safety term combines a collision indicator with a squared penalty inside a
//! safety margin around each agent's bounding box, scaled per step by speed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, OrientedRect, Point, Polyline};
use crate::trajectory::{BoundingBox, CandidateSet, KinematicState, Trajectory};

/// Which feature basis an energy model evaluates.
///
/// `Privileged` appends two teacher-only features derived from other agents'
/// ground-truth futures (mean speed, total heading change); only the teacher
/// model in the distillation demo uses it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    #[default]
    Base,
    Privileged,
}

/// Base feature count: lane offset, speed-limit gap, accel, jerk, curvature,
/// route progress, heading alignment.
pub const BASE_FEATURE_DIM: usize = 7;

impl FeatureSet {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSet::Base => BASE_FEATURE_DIM,
            FeatureSet::Privileged => BASE_FEATURE_DIM + 2,
        }
    }
}

/// Learnable coefficients plus the fixed safety-term shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    /// Coefficients over the feature basis.
    pub w: Vec<f64>,
    pub feature_set: FeatureSet,
    /// Added once if any step of a trajectory pair collides.
    pub safety_collision_weight: f64,
    /// Boundary-to-boundary distance under which the squared penalty applies.
    pub safety_margin: f64,
    /// Ceiling on interaction energies inside the prediction model (the
    /// MRF potentials), leaving plan costs untouched. Agents are modeled as
    /// willing to absorb at most this much inconvenience to avoid a
    /// conflict, so conditioning on an aggressive ego candidate never makes
    /// other agents' evasion a certainty.
    ///
    /// The effective cap for an agent scales with its current speed:
    /// `min(interaction_cap, interaction_cap_floor + interaction_cap_rate · v)`.
    /// A stationary car is modeled as unlikely to launch from rest to
    /// accommodate someone else, while a moving driver readily modulates
    /// speed; without the speed term, conditioning would predict that even
    /// parked cars flee an approaching ego.
    pub interaction_cap: f64,
    /// Effective cap for a stationary agent; see `interaction_cap`.
    pub interaction_cap_floor: f64,
    /// Cap increase per m/s of current speed; see `interaction_cap`.
    pub interaction_cap_rate: f64,
}

/// Default prediction-side ceiling on interaction energies.
pub const DEFAULT_INTERACTION_CAP: f64 = 12.0;
/// Default cap for a stationary agent.
pub const DEFAULT_INTERACTION_CAP_FLOOR: f64 = 1.0;
/// Default cap increase per m/s of agent speed.
pub const DEFAULT_INTERACTION_CAP_RATE: f64 = 1.5;

impl EnergyWeights {
    pub fn new(w: Vec<f64>, feature_set: FeatureSet) -> Result<Self> {
        let weights = Self {
            w,
            feature_set,
            safety_collision_weight: 1e4,
            safety_margin: 2.0,
            interaction_cap: DEFAULT_INTERACTION_CAP,
            interaction_cap_floor: DEFAULT_INTERACTION_CAP_FLOOR,
            interaction_cap_rate: DEFAULT_INTERACTION_CAP_RATE,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.feature_set.dim() {
            return Err(Error::Shape(format!(
                "weight vector has {} entries, feature basis needs {}",
                self.w.len(),
                self.feature_set.dim()
            )));
        }
        if !self.w.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite energy weight".into()));
        }
        if self.safety_collision_weight < 0.0 {
            return Err(Error::Config("collision weight must be >= 0".into()));
        }
        if self.safety_margin <= 0.0 {
            return Err(Error::Config("safety margin must be > 0".into()));
        }
        if !(self.interaction_cap > 0.0) {
            return Err(Error::Config("interaction cap must be > 0".into()));
        }
        if !(self.interaction_cap_floor > 0.0) {
            return Err(Error::Config("interaction cap floor must be > 0".into()));
        }
        if !(self.interaction_cap_rate >= 0.0) {
            return Err(Error::Config("interaction cap rate must be >= 0".into()));
        }
        if self.interaction_cap < self.interaction_cap_floor {
            return Err(Error::Config(
                "interaction cap must be >= its stationary floor".into(),
            ));
        }
        Ok(())
    }

    /// Hand-set defaults that prefer lane-centered, smooth, progressing
    /// candidates; used when no fitted weights file is supplied.
    pub fn default_base() -> Self {
        Self {
            // lane offset, |v - limit|, |accel|, |jerk|, |curvature|, progress, heading error
            w: vec![0.5, 0.3, 0.4, 0.1, 1.0, -0.05, 0.5],
            feature_set: FeatureSet::Base,
            safety_collision_weight: 1e4,
            safety_margin: 2.0,
            interaction_cap: DEFAULT_INTERACTION_CAP,
            interaction_cap_floor: DEFAULT_INTERACTION_CAP_FLOOR,
            interaction_cap_rate: DEFAULT_INTERACTION_CAP_RATE,
        }
    }

    /// Privileged-teacher defaults: the base coefficients plus zero-initialized
    /// weights on the two future-discrepancy features.
    pub fn default_privileged() -> Self {
        let mut weights = Self::default_base();
        weights.feature_set = FeatureSet::Privileged;
        weights.w.extend([0.0, 0.0]);
        weights
    }

    /// Effective prediction-side cap for a participant at current speed `v`.
    pub fn effective_cap(&self, v: f64) -> f64 {
        (self.interaction_cap_floor + self.interaction_cap_rate * v.abs())
            .min(self.interaction_cap)
    }
}

/// Ground-truth future summary available only to the teacher model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PrivilegedInfo {
    pub future_mean_speed: f64,
    pub future_heading_change: f64,
}

/// One agent as seen by the planner: current state, short history, body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentObservation {
    pub state: KinematicState,
    pub history: Vec<KinematicState>,
    pub bbox: BoundingBox,
}

/// Lane centerline plus width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub centerline: Polyline,
    pub width: f64,
}

/// Everything the energies see: explicit scene features standing in for the
/// learned scene embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningContext {
    pub ego: AgentObservation,
    pub agents: Vec<AgentObservation>,
    pub route: Polyline,
    pub lanes: Vec<Lane>,
    pub speed_limit: f64,
    /// Per-agent privileged futures, indexed like `agents`; `None` outside
    /// the teacher path.
    pub privileged: Option<Vec<PrivilegedInfo>>,
}

impl PlanningContext {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }
}

/// K x (N+1) agent-term energies; column 0 is the ego.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Vec<Vec<f64>>, // values[k][i]
}

impl ScoreMatrix {
    pub fn get(&self, candidate: usize, agent_column: usize) -> f64 {
        self.values[candidate][agent_column]
    }

    pub fn column(&self, agent_column: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[agent_column]).collect()
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn columns(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// Reference polyline for a candidate: the route for the ego, the nearest
/// lane centerline for other agents (route as fallback).
fn reference_polyline<'a>(ctx: &'a PlanningContext, traj: &Trajectory, is_ego: bool) -> &'a Polyline {
    if is_ego || ctx.lanes.is_empty() {
        return &ctx.route;
    }
    let start = traj.start().position();
    ctx.lanes
        .iter()
        .map(|l| &l.centerline)
        .min_by(|a, b| {
            a.distance_to(start)
                .partial_cmp(&b.distance_to(start))
                .expect("finite distances")
        })
        .unwrap_or(&ctx.route)
}

fn nearest_lane_offset(ctx: &PlanningContext, p: Point) -> f64 {
    if ctx.lanes.is_empty() {
        return ctx.route.distance_to(p);
    }
    ctx.lanes
        .iter()
        .map(|l| l.centerline.distance_to(p))
        .fold(f64::INFINITY, f64::min)
}

/// The per-candidate feature vector phi.
///
/// Base entries: mean lane-center offset, mean |speed - limit|, mean |accel|,
/// mean |jerk|, mean |curvature|, signed route-arclength progress, mean
/// heading-alignment error against the reference polyline.
pub fn candidate_features(
    traj: &Trajectory,
    ctx: &PlanningContext,
    agent_index: Option<usize>,
    feature_set: FeatureSet,
) -> Vec<f64> {
    let states = traj.states();
    let n = states.len() as f64;
    let dt = traj.dt();
    let is_ego = agent_index.is_none();
    let reference = reference_polyline(ctx, traj, is_ego);

    let lane_offset = states
        .iter()
        .map(|s| nearest_lane_offset(ctx, s.position()))
        .sum::<f64>()
        / n;
    let speed_gap = states
        .iter()
        .map(|s| (s.speed - ctx.speed_limit).abs())
        .sum::<f64>()
        / n;

    let accels: Vec<f64> = states
        .windows(2)
        .map(|w| (w[1].speed - w[0].speed) / dt)
        .collect();
    let mean_accel = if accels.is_empty() {
        0.0
    } else {
        accels.iter().map(|a| a.abs()).sum::<f64>() / accels.len() as f64
    };
    let jerks: Vec<f64> = accels.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let mean_jerk = if jerks.is_empty() {
        0.0
    } else {
        jerks.iter().map(|j| j.abs()).sum::<f64>() / jerks.len() as f64
    };

    let mut curv_sum = 0.0;
    let mut curv_count = 0usize;
    for w in states.windows(2) {
        let ds = w[0].position().dist(w[1].position());
        if ds > 1e-9 {
            curv_sum += (wrap_angle(w[1].heading - w[0].heading) / ds).abs();
            curv_count += 1;
        }
    }
    let mean_curvature = if curv_count == 0 {
        0.0
    } else {
        curv_sum / curv_count as f64
    };

    let progress = reference.project(traj.end().position()).1
        - reference.project(traj.start().position()).1;

    let heading_err = states
        .iter()
        .map(|s| {
            let t = reference.tangent_at(s.position());
            wrap_angle(s.heading - t.y.atan2(t.x)).abs()
        })
        .sum::<f64>()
        / n;

    let mut phi = vec![
        lane_offset,
        speed_gap,
        mean_accel,
        mean_jerk,
        mean_curvature,
        progress,
        heading_err,
    ];
    if feature_set == FeatureSet::Privileged {
        // Discrepancies between the candidate and the logged future; zero
        // when no privileged summary exists (the ego, or inference time),
        // so the extra weights then have no effect.
        let info = agent_index.and_then(|i| ctx.privileged.as_ref().and_then(|p| p.get(i)));
        match info {
            Some(info) => {
                let mean_speed = states.iter().map(|s| s.speed).sum::<f64>() / n;
                let heading_change = wrap_angle(traj.end().heading - traj.start().heading);
                phi.push((mean_speed - info.future_mean_speed).abs());
                phi.push(wrap_angle(heading_change - info.future_heading_change).abs());
            }
            None => {
                phi.push(0.0);
                phi.push(0.0);
            }
        }
    }
    phi
}

/// The agent-specific term: w . phi for every candidate of every agent.
pub fn agent_energy(
    ctx: &PlanningContext,
    sets: &[CandidateSet],
    weights: &EnergyWeights,
) -> Result<ScoreMatrix> {
    weights.validate()?;
    if sets.len() != ctx.n_agents() + 1 {
        return Err(Error::Shape(format!(
            "expected {} candidate sets (ego + agents), got {}",
            ctx.n_agents() + 1,
            sets.len()
        )));
    }
    let k = sets[0].k();
    if sets.iter().any(|s| s.k() != k) {
        return Err(Error::Shape("candidate sets must share K".into()));
    }
    let mut values = vec![vec![0.0; sets.len()]; k];
    for (col, set) in sets.iter().enumerate() {
        let agent_index = if col == 0 { None } else { Some(col - 1) };
        for (row, traj) in set.candidates().iter().enumerate() {
            let phi = candidate_features(traj, ctx, agent_index, weights.feature_set);
            values[row][col] = phi.iter().zip(&weights.w).map(|(f, w)| f * w).sum();
        }
    }
    Ok(ScoreMatrix { values })
}

/// Oriented footprint of an agent at one waypoint.
pub fn footprint(state: &KinematicState, bbox: &BoundingBox) -> OrientedRect {
    OrientedRect::new(state.position(), state.heading, bbox.length, bbox.width)
}

/// Pairwise safety energy between two aligned trajectories.
///
/// `scale_speed` supplies the per-step scaling speeds (the ego's speeds for
/// ego-involved pairs, the first trajectory's speeds for agent-agent pairs).
pub fn safety_energy(
    a: &Trajectory,
    box_a: &BoundingBox,
    b: &Trajectory,
    box_b: &BoundingBox,
    scale_speed: &[f64],
    weights: &EnergyWeights,
) -> Result<f64> {
    if a.len() != b.len() || scale_speed.len() != a.len() {
        return Err(Error::Shape(format!(
            "safety_energy: {} vs {} steps, {} speeds",
            a.len(),
            b.len(),
            scale_speed.len()
        )));
    }
    let mut collided = false;
    let mut penalty = 0.0;
    for ((sa, sb), &v) in a.states().iter().zip(b.states()).zip(scale_speed) {
        let ra = footprint(sa, box_a);
        let rb = footprint(sb, box_b);
        if !collided && ra.overlaps(&rb) {
            collided = true;
        }
        let gap = ra.gap(&rb);
        let violation = (weights.safety_margin - gap).max(0.0);
        penalty += v * violation * violation;
    }
    Ok(if collided {
        weights.safety_collision_weight + penalty
    } else {
        penalty
    })
}

/// Safety energy with the first trajectory's own speeds as the scaling.
pub fn safety_energy_first_speed(
    a: &Trajectory,
    box_a: &BoundingBox,
    b: &Trajectory,
    box_b: &BoundingBox,
    weights: &EnergyWeights,
) -> Result<f64> {
    let speeds: Vec<f64> = a.states().iter().map(|s| s.speed).collect();
    safety_energy(a, box_a, b, box_b, &speeds, weights)
}

/// Goal term: mean projected distance of the ego candidate to the route.
pub fn goal_energy(tau0: &Trajectory, route: &Polyline) -> f64 {
    crate::trajectory::route_deviation(tau0, route)
}

/// Full joint energy of one candidate assignment (index per agent, ego
/// first). Pairs are summed once, ego pairs included.
pub fn joint_energy(
    assignment: &[usize],
    ctx: &PlanningContext,
    sets: &[CandidateSet],
    weights: &EnergyWeights,
) -> Result<f64> {
    if assignment.len() != sets.len() {
        return Err(Error::Shape(format!(
            "assignment length {} vs {} candidate sets",
            assignment.len(),
            sets.len()
        )));
    }
    let scores = agent_energy(ctx, sets, weights)?;
    let trajs: Vec<&Trajectory> = assignment
        .iter()
        .zip(sets)
        .map(|(&idx, set)| set.get(idx))
        .collect::<Result<_>>()?;
    let boxes: Vec<&BoundingBox> = std::iter::once(&ctx.ego.bbox)
        .chain(ctx.agents.iter().map(|a| &a.bbox))
        .collect();

    let mut total = 0.0;
    for (i, &idx) in assignment.iter().enumerate() {
        total += scores.get(idx, i);
    }
    for i in 0..trajs.len() {
        for j in (i + 1)..trajs.len() {
            total += safety_energy_first_speed(trajs[i], boxes[i], trajs[j], boxes[j], weights)?;
        }
    }
    total += goal_energy(trajs[0], &ctx.route);
    Ok(total)
}

/// All energy tables a planning cycle needs, computed once per scene.
///
/// Ego-agent safety rows depend on the ego candidate, so they are stored as
/// full K x K tables; agent-agent tables are omitted when the two candidate
/// envelopes never come within the safety margin (those energies are exactly
/// zero).
#[derive(Debug, Clone)]
pub struct EnergyTables {
    pub scores: ScoreMatrix,
    /// E_g per ego candidate.
    pub goal: Vec<f64>,
    /// Per agent i: table[ego_k][agent_l] = E_s(ego candidate k, agent i candidate l).
    pub ego_agent_safety: Vec<Vec<Vec<f64>>>,
    /// Per unordered agent pair (i < j): K x K table, None when pruned.
    pub agent_pair_safety: Vec<((usize, usize), Vec<Vec<f64>>)>,
    /// Per-participant prediction-side ceilings (ego first), from the
    /// weights' speed-scaled cap rule; MRF builders clip safety energies at
    /// these values, plan costs use them uncapped.
    ///
    /// The cap never applies to a candidate that sweeps through another
    /// participant's current footprint: that candidate causes the collision
    /// itself, and a rational driver avoids it with certainty rather than
    /// at bounded inconvenience.
    pub interaction_caps: Vec<f64>,
    /// ego_agent_conflict[i][l]: agent i's candidate l sweeps through the
    /// ego's initial footprint.
    pub ego_agent_conflict: Vec<Vec<bool>>,
    /// agent_ego_conflict[i][k]: ego candidate k sweeps through agent i's
    /// initial footprint.
    pub agent_ego_conflict: Vec<Vec<bool>>,
    /// Aligned with `agent_pair_safety`: for pair (i, j), candidate flags
    /// (i's candidates against j's initial footprint, j's against i's).
    pub pair_conflict: Vec<(Vec<bool>, Vec<bool>)>,
}

/// For each candidate in `set`: whether any step's footprint overlaps the
/// fixed `obstacle` box.
fn sweeps_through(set: &CandidateSet, bbox: &BoundingBox, obstacle: &OrientedRect) -> Vec<bool> {
    set.candidates()
        .iter()
        .map(|traj| {
            traj.states()
                .iter()
                .any(|s| footprint(s, bbox).overlaps(obstacle))
        })
        .collect()
}

/// Conservative per-step envelope check: true when no candidate pair of the
/// two sets can come within `margin`, so every safety energy is exactly zero.
fn envelopes_clear(a: &CandidateSet, box_a: &BoundingBox, b: &CandidateSet, box_b: &BoundingBox, margin: f64) -> bool {
    let steps = a.candidates()[0].len();
    let radius_a = 0.5 * (box_a.length.powi(2) + box_a.width.powi(2)).sqrt();
    let radius_b = 0.5 * (box_b.length.powi(2) + box_b.width.powi(2)).sqrt();
    for t in 0..steps {
        let bound_a = step_bounds(a, t);
        let bound_b = step_bounds(b, t);
        let dx = (bound_b.0 - bound_a.1).max(bound_a.0 - bound_b.1).max(0.0);
        let dy = (bound_b.2 - bound_a.3).max(bound_a.2 - bound_b.3).max(0.0);
        let gap_lower_bound = (dx * dx + dy * dy).sqrt() - radius_a - radius_b;
        if gap_lower_bound <= margin {
            return false;
        }
    }
    true
}

/// (min_x, max_x, min_y, max_y) over all candidates at step `t`.
fn step_bounds(set: &CandidateSet, t: usize) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in set.candidates() {
        let s = &c.states()[t];
        b.0 = b.0.min(s.x);
        b.1 = b.1.max(s.x);
        b.2 = b.2.min(s.y);
        b.3 = b.3.max(s.y);
    }
    b
}

/// Check whether an agent pair's safety table can be skipped entirely.
pub fn pair_prunable(
    a: &CandidateSet,
    box_a: &BoundingBox,
    b: &CandidateSet,
    box_b: &BoundingBox,
    weights: &EnergyWeights,
) -> bool {
    envelopes_clear(a, box_a, b, box_b, weights.safety_margin)
}

pub fn build_energy_tables(
    ctx: &PlanningContext,
    sets: &[CandidateSet],
    weights: &EnergyWeights,
) -> Result<EnergyTables> {
    let scores = agent_energy(ctx, sets, weights)?;
    let ego_set = &sets[0];
    let goal: Vec<f64> = ego_set
        .candidates()
        .iter()
        .map(|c| goal_energy(c, &ctx.route))
        .collect();

    let mut ego_agent_safety = Vec::with_capacity(ctx.n_agents());
    for (i, agent) in ctx.agents.iter().enumerate() {
        let set_i = &sets[i + 1];
        let mut table = vec![vec![0.0; set_i.k()]; ego_set.k()];
        if !pair_prunable(ego_set, &ctx.ego.bbox, set_i, &agent.bbox, weights) {
            for (ek, ego_traj) in ego_set.candidates().iter().enumerate() {
                let ego_speeds: Vec<f64> = ego_traj.states().iter().map(|s| s.speed).collect();
                for (al, agent_traj) in set_i.candidates().iter().enumerate() {
                    table[ek][al] = safety_energy(
                        ego_traj,
                        &ctx.ego.bbox,
                        agent_traj,
                        &agent.bbox,
                        &ego_speeds,
                        weights,
                    )?;
                }
            }
        }
        ego_agent_safety.push(table);
    }

    let mut agent_pair_safety = Vec::new();
    for i in 0..ctx.n_agents() {
        for j in (i + 1)..ctx.n_agents() {
            let (set_i, set_j) = (&sets[i + 1], &sets[j + 1]);
            let (box_i, box_j) = (&ctx.agents[i].bbox, &ctx.agents[j].bbox);
            if pair_prunable(set_i, box_i, set_j, box_j, weights) {
                continue;
            }
            let mut table = vec![vec![0.0; set_j.k()]; set_i.k()];
            for (k, ti) in set_i.candidates().iter().enumerate() {
                for (l, tj) in set_j.candidates().iter().enumerate() {
                    table[k][l] = safety_energy_first_speed(ti, box_i, tj, box_j, weights)?;
                }
            }
            agent_pair_safety.push(((i, j), table));
        }
    }

    let interaction_caps = std::iter::once(ctx.ego.state.speed)
        .chain(ctx.agents.iter().map(|a| a.state.speed))
        .map(|v| weights.effective_cap(v))
        .collect();

    let ego_box0 = footprint(&ctx.ego.state, &ctx.ego.bbox);
    let ego_agent_conflict: Vec<Vec<bool>> = ctx
        .agents
        .iter()
        .enumerate()
        .map(|(i, agent)| sweeps_through(&sets[i + 1], &agent.bbox, &ego_box0))
        .collect();
    let agent_ego_conflict: Vec<Vec<bool>> = ctx
        .agents
        .iter()
        .map(|agent| {
            let agent_box0 = footprint(&agent.state, &agent.bbox);
            sweeps_through(ego_set, &ctx.ego.bbox, &agent_box0)
        })
        .collect();
    let pair_conflict: Vec<(Vec<bool>, Vec<bool>)> = agent_pair_safety
        .iter()
        .map(|((i, j), _)| {
            let box_i0 = footprint(&ctx.agents[*i].state, &ctx.agents[*i].bbox);
            let box_j0 = footprint(&ctx.agents[*j].state, &ctx.agents[*j].bbox);
            (
                sweeps_through(&sets[*i + 1], &ctx.agents[*i].bbox, &box_j0),
                sweeps_through(&sets[*j + 1], &ctx.agents[*j].bbox, &box_i0),
            )
        })
        .collect();

    Ok(EnergyTables {
        scores,
        goal,
        ego_agent_safety,
        agent_pair_safety,
        interaction_caps,
        ego_agent_conflict,
        agent_ego_conflict,
        pair_conflict,
    })
}
