//! Closed-loop 2D kinematic world: lanes, scripted reactive traffic, a
//! replanning loop around the planner, and success/right-lane metrics.
//!
//! Scripted agents follow their lane with a headway-based longitudinal
//! controller and yield to any vehicle whose nose has entered their lane
//! corridor ahead of them — the reactivity an interactive planner can
//! exploit when merging.

use std::io::{BufRead, Write as IoWrite};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{
    AgentObservation, EnergyWeights, Lane, PlanningContext, PrivilegedInfo,
};
use crate::error::{Error, Result};
use crate::geometry::{Point, Polyline};
use crate::inference::LbpOptions;
use crate::learning::TrainingScene;
use crate::planner::{plan, PlanMode};
use crate::trajectory::{
    sample_candidates, BoundingBox, CandidateSet, KinematicState, SamplerProfile, Trajectory,
};

/// Version stamped into every trace header; bump on schema changes.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Longitudinal control parameters of a scripted agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorParams {
    /// m/s; the agent never exceeds it.
    pub desired_speed: f64,
    /// Seconds of time-headway kept to the leader.
    pub time_headway: f64,
    /// m/s^2 braking bound.
    pub max_decel: f64,
    /// m/s^2 acceleration bound.
    pub max_accel: f64,
    /// Meters kept to a stopped leader.
    pub standstill_gap: f64,
    /// Leaders beyond this range are ignored.
    pub detection_range: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            desired_speed: 7.0,
            time_headway: 1.5,
            max_decel: 4.0,
            max_accel: 2.0,
            standstill_gap: 2.0,
            detection_range: 60.0,
        }
    }
}

/// One scripted agent's starting configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAgent {
    pub state: KinematicState,
    pub bbox: BoundingBox,
    pub behavior: BehaviorParams,
}

/// Episode termination region on the route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub point: Point,
    pub radius: f64,
}

/// A complete episode setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub lanes: Vec<Lane>,
    /// High-level route the ego should follow.
    pub route: Polyline,
    pub goal: Goal,
    pub ego_init: KinematicState,
    pub ego_bbox: BoundingBox,
    pub agents_init: Vec<ScenarioAgent>,
    /// Seconds before the episode times out.
    pub time_budget: f64,
    pub seed: u64,
    pub speed_limit: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.time_budget <= 0.0 {
            return Err(Error::Config("time budget must be positive".into()));
        }
        if self.lanes.is_empty() {
            return Err(Error::Config("scenario needs at least one lane".into()));
        }
        let ego_on_lane = self.lanes.iter().any(|l| {
            l.centerline.distance_to(self.ego_init.position()) <= l.width * 0.5
        });
        if !ego_on_lane {
            return Err(Error::Config("ego does not start on a lane".into()));
        }
        if self.route.distance_to(self.goal.point) > self.goal.radius {
            return Err(Error::Config("goal lies off the route".into()));
        }
        Ok(())
    }

    /// Half-width of the route corridor used by the right-lane metric.
    pub fn corridor_half_width(&self) -> f64 {
        self.lanes
            .iter()
            .map(|l| l.width * 0.5)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Knobs of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Seconds between replans; the executed slice of each plan.
    pub replan_period: f64,
    pub sampler: SamplerProfile,
    pub lbp: LbpOptions,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            replan_period: 0.5,
            sampler: SamplerProfile::default(),
            lbp: LbpOptions::default(),
        }
    }
}

/// Episode-terminating outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Collision,
    OffLane,
    GoalReached,
    Timeout,
    PlannerFailure,
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: PlanMode,
    pub scenario: Scenario,
    pub options: SimOptions,
}

/// One closed-loop tick, recorded after executing the plan slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    /// Seconds since episode start, at the end of the tick.
    pub time: f64,
    pub ego: KinematicState,
    pub agents: Vec<KinematicState>,
    pub chosen_index: Option<usize>,
    /// Expected cost per ego candidate.
    pub costs: Vec<f64>,
    /// Scenario agent indices that entered the MRF, in node order.
    pub included_agents: Vec<usize>,
    /// Marginal rows over candidates, one per included agent.
    pub marginals: Vec<Vec<f64>>,
    pub event: Option<Event>,
}

/// Full episode record; serializes to JSON lines (header first).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub ticks: Vec<TickRecord>,
    /// Wall-clock planning seconds per tick; excluded from serialization so
    /// traces stay byte-identical across runs.
    pub plan_times: Vec<f64>,
}

impl EpisodeTrace {
    pub fn terminal_event(&self) -> Option<Event> {
        self.ticks.last().and_then(|t| t.event)
    }

    pub fn write_jsonl<W: IoWrite>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header).map_err(Error::TraceDecode)?;
        w.write_all(b"\n")?;
        for tick in &self.ticks {
            serde_json::to_writer(&mut w, tick).map_err(Error::TraceDecode)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Numeric(e.to_string()))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Config("empty trace file".into()))??;
        let header: TraceHeader =
            serde_json::from_str(&header_line).map_err(Error::TraceDecode)?;
        if header.schema_version != TRACE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "trace schema version {} unsupported (expected {TRACE_SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let mut ticks = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            ticks.push(serde_json::from_str(&line).map_err(Error::TraceDecode)?);
        }
        Ok(Self {
            header,
            ticks,
            plan_times: Vec::new(),
        })
    }
}

/// Aggregated closed-loop results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of episodes ending in goal-reached.
    pub success_rate: f64,
    /// Mean fraction of ticks spent inside the route corridor.
    pub right_lane_rate: f64,
    pub episodes: usize,
    pub collisions: usize,
    pub timeouts: usize,
}

/// Nose of a vehicle: center advanced by half its length along the heading.
fn front_point(state: &KinematicState, bbox: &BoundingBox) -> Point {
    let (s, c) = state.heading.sin_cos();
    state
        .position()
        .add(Point::new(c, s).scale(bbox.length * 0.5))
}

/// One control step of a scripted lane-following agent.
///
/// The agent accelerates toward its desired speed, keeps a time-headway to
/// the nearest leader in its lane corridor, and treats any vehicle whose
/// nose has entered the corridor ahead of it (e.g. a merging ego) as a
/// leader to yield to. It then advances along the lane centerline.
pub fn step_scripted_agent(
    state: &KinematicState,
    bbox: &BoundingBox,
    behavior: &BehaviorParams,
    lane: &Lane,
    neighbors: &[(KinematicState, BoundingBox)],
    dt: f64,
) -> KinematicState {
    let accel = scripted_accel(state, bbox, behavior, lane, neighbors);
    let mut new_speed = (state.speed + accel * dt).max(0.0);
    if accel > 0.0 {
        new_speed = new_speed.min(behavior.desired_speed.max(state.speed));
    }
    let ds = ((state.speed + new_speed) * 0.5 * dt).max(0.0);
    let s_new = lane.centerline.project(state.position()).1 + ds;
    let pos = lane.centerline.point_at(s_new);
    let tangent = lane.centerline.tangent_at_arclength(s_new);
    KinematicState::new(pos.x, pos.y, tangent.y.atan2(tangent.x), new_speed)
}

/// Commanded acceleration of the scripted controller (bounded both ways).
pub fn scripted_accel(
    state: &KinematicState,
    bbox: &BoundingBox,
    behavior: &BehaviorParams,
    lane: &Lane,
    neighbors: &[(KinematicState, BoundingBox)],
) -> f64 {
    let clamp = |a: f64| a.clamp(-behavior.max_decel, behavior.max_accel);
    let free = clamp(behavior.desired_speed - state.speed);

    let center = &lane.centerline;
    let half_width = lane.width * 0.5;
    let s_front = center.project(front_point(state, bbox)).1;

    // nearest leader: any neighbor whose nose is inside the corridor and
    // ahead of ours
    let mut leader: Option<(f64, f64)> = None; // (gap, speed)
    for (n_state, n_bbox) in neighbors {
        let nose = front_point(n_state, n_bbox);
        if center.distance_to(nose) > half_width {
            continue;
        }
        let n_rear = center.project(nose).1 - n_bbox.length;
        let gap = n_rear - s_front;
        if gap <= -n_bbox.length || gap > behavior.detection_range {
            continue;
        }
        let gap = gap.max(0.0);
        if leader.is_none_or(|(g, _)| gap < g) {
            leader = Some((gap, n_state.speed));
        }
    }

    match leader {
        None => free,
        Some((gap, leader_speed)) => {
            let target_gap = behavior.standstill_gap + behavior.time_headway * state.speed;
            let follow = clamp(0.5 * (gap - target_gap) + (leader_speed - state.speed));
            follow.min(free)
        }
    }
}

fn detect_event(
    scenario: &Scenario,
    ego: &KinematicState,
    agents: &[(KinematicState, BoundingBox)],
) -> Option<Event> {
    let ego_box = crate::energy::footprint(ego, &scenario.ego_bbox);
    for (state, bbox) in agents {
        if ego_box.overlaps(&crate::energy::footprint(state, bbox)) {
            return Some(Event::Collision);
        }
    }
    let on_lane = scenario
        .lanes
        .iter()
        .any(|l| l.centerline.distance_to(ego.position()) <= l.width * 0.5);
    if !on_lane {
        return Some(Event::OffLane);
    }
    if ego.position().dist(scenario.goal.point) <= scenario.goal.radius {
        return Some(Event::GoalReached);
    }
    None
}

/// Run one closed-loop episode: replan, execute one plan slice, step the
/// scripted traffic, detect terminal events. Deterministic for a fixed
/// scenario, weights, and mode.
pub fn run_episode(
    scenario: &Scenario,
    weights: &EnergyWeights,
    mode: PlanMode,
    opts: &SimOptions,
) -> Result<EpisodeTrace> {
    scenario.validate()?;
    if (opts.replan_period - opts.sampler.dt).abs() > 1e-9 {
        return Err(Error::Config(
            "replan period must equal the sampler step for slice execution".into(),
        ));
    }
    let dt = opts.replan_period;
    let mut ego = scenario.ego_init;
    let mut agents: Vec<(KinematicState, BoundingBox, BehaviorParams, usize)> = scenario
        .agents_init
        .iter()
        .map(|a| {
            let lane_idx = scenario
                .lanes
                .iter()
                .enumerate()
                .min_by(|(_, l1), (_, l2)| {
                    l1.centerline
                        .distance_to(a.state.position())
                        .partial_cmp(&l2.centerline.distance_to(a.state.position()))
                        .expect("finite distances")
                })
                .map(|(i, _)| i)
                .expect("non-empty lanes");
            (a.state, a.bbox, a.behavior, lane_idx)
        })
        .collect();

    let mut trace = EpisodeTrace {
        header: TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            seed: scenario.seed,
            mode,
            scenario: scenario.clone(),
            options: opts.clone(),
        },
        ticks: Vec::new(),
        plan_times: Vec::new(),
    };

    let steps = (scenario.time_budget / dt).ceil() as u64;
    for tick in 0..steps {
        let ctx = PlanningContext {
            ego: AgentObservation {
                state: ego,
                history: vec![],
                bbox: scenario.ego_bbox,
            },
            agents: agents
                .iter()
                .map(|(s, b, _, _)| AgentObservation {
                    state: *s,
                    history: vec![],
                    bbox: *b,
                })
                .collect(),
            lanes: scenario.lanes.clone(),
            route: scenario.route.clone(),
            speed_limit: scenario.speed_limit,
            privileged: None,
        };
        let mut sets = Vec::with_capacity(agents.len() + 1);
        sets.push(sample_candidates(&ego, &opts.sampler)?);
        for (s, _, _, _) in &agents {
            sets.push(sample_candidates(s, &opts.sampler)?);
        }

        let started = Instant::now();
        let planned = plan(&ctx, &sets, weights, mode, &opts.lbp);
        trace.plan_times.push(started.elapsed().as_secs_f64());
        let result = match planned {
            Ok(r) => r,
            Err(_) => {
                trace.ticks.push(TickRecord {
                    tick,
                    time: (tick + 1) as f64 * dt,
                    ego,
                    agents: agents.iter().map(|(s, ..)| *s).collect(),
                    chosen_index: None,
                    costs: vec![],
                    included_agents: vec![],
                    marginals: vec![],
                    event: Some(Event::PlannerFailure),
                });
                break;
            }
        };

        // execute the first slice of the chosen plan
        ego = result.chosen_trajectory.states()[1];

        // step scripted traffic against the updated ego pose
        let snapshot: Vec<(KinematicState, BoundingBox)> = agents
            .iter()
            .map(|(s, b, _, _)| (*s, *b))
            .chain(std::iter::once((ego, scenario.ego_bbox)))
            .collect();
        for (i, (state, bbox, behavior, lane_idx)) in agents.iter_mut().enumerate() {
            let others: Vec<(KinematicState, BoundingBox)> = snapshot
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, n)| *n)
                .collect();
            *state = step_scripted_agent(
                state,
                bbox,
                behavior,
                &scenario.lanes[*lane_idx],
                &others,
                dt,
            );
        }

        let agent_boxes: Vec<(KinematicState, BoundingBox)> =
            agents.iter().map(|(s, b, _, _)| (*s, *b)).collect();
        let mut event = detect_event(scenario, &ego, &agent_boxes);
        if event.is_none() && tick + 1 == steps {
            event = Some(Event::Timeout);
        }

        trace.ticks.push(TickRecord {
            tick,
            time: (tick + 1) as f64 * dt,
            ego,
            agents: agents.iter().map(|(s, ..)| *s).collect(),
            chosen_index: Some(result.chosen_index),
            costs: result.costs.clone(),
            included_agents: result.included_agents.clone(),
            marginals: result.predictions.unary.clone(),
            event,
        });
        if event.is_some() {
            break;
        }
    }
    Ok(trace)
}

/// Fraction of ticks the ego spent inside the route corridor.
pub fn right_lane_fraction(trace: &EpisodeTrace) -> f64 {
    if trace.ticks.is_empty() {
        return 1.0;
    }
    let half = trace.header.scenario.corridor_half_width();
    let route = &trace.header.scenario.route;
    let inside = trace
        .ticks
        .iter()
        .filter(|t| route.distance_to(t.ego.position()) < half)
        .count();
    inside as f64 / trace.ticks.len() as f64
}

/// Run every scenario `episodes_per_scenario` times and aggregate.
pub fn evaluate(
    scenarios: &[Scenario],
    weights: &EnergyWeights,
    mode: PlanMode,
    episodes_per_scenario: usize,
    opts: &SimOptions,
) -> Result<Metrics> {
    if episodes_per_scenario == 0 {
        return Err(Error::Config("episodes per scenario must be >= 1".into()));
    }
    let mut traces = Vec::new();
    for scenario in scenarios {
        for _ in 0..episodes_per_scenario {
            traces.push(run_episode(scenario, weights, mode, opts)?);
        }
    }
    Ok(metrics_from_traces(&traces))
}

/// Aggregate already-run episodes into metrics.
pub fn metrics_from_traces(traces: &[EpisodeTrace]) -> Metrics {
    let episodes = traces.len();
    let mut successes = 0;
    let mut collisions = 0;
    let mut timeouts = 0;
    let mut rl_sum = 0.0;
    for trace in traces {
        match trace.terminal_event() {
            Some(Event::GoalReached) => successes += 1,
            Some(Event::Collision) => collisions += 1,
            Some(Event::Timeout) => timeouts += 1,
            _ => {}
        }
        rl_sum += right_lane_fraction(trace);
    }
    let denom = episodes.max(1) as f64;
    Metrics {
        success_rate: successes as f64 / denom,
        right_lane_rate: rl_sum / denom,
        episodes,
        collisions,
        timeouts,
    }
}

/// Summary of an agent's logged future used as a privileged feature.
fn privileged_from_future(future: &Trajectory) -> PrivilegedInfo {
    let states = future.states();
    let mean_speed = states.iter().map(|s| s.speed).sum::<f64>() / states.len() as f64;
    let heading_change = crate::geometry::wrap_angle(
        future.end().heading - future.start().heading,
    );
    PrivilegedInfo {
        future_mean_speed: mean_speed,
        future_heading_change: heading_change,
    }
}

/// Slice a trace into supervised scenes: at each eligible tick, the context
/// is the recorded world state and the ground truth is every vehicle's
/// logged future over one planning horizon. Privileged future summaries are
/// filled in so the same scenes can train a privileged teacher.
pub fn training_scenes_from_trace(
    trace: &EpisodeTrace,
    stride: usize,
) -> Result<Vec<TrainingScene>> {
    let sampler = &trace.header.options.sampler;
    let horizon_steps = (sampler.horizon / sampler.dt).round() as usize;
    let scenario = &trace.header.scenario;
    let mut scenes = Vec::new();
    let stride = stride.max(1);
    let mut t = 0usize;
    while t + horizon_steps < trace.ticks.len() {
        let now = &trace.ticks[t];
        let future_states = |pick: &dyn Fn(&TickRecord) -> KinematicState| -> Result<Trajectory> {
            let states: Vec<KinematicState> = (t..=t + horizon_steps)
                .map(|i| pick(&trace.ticks[i]))
                .collect();
            Trajectory::new(states, sampler.dt)
        };
        let mut gt = vec![future_states(&|r: &TickRecord| r.ego)?];
        for a in 0..now.agents.len() {
            gt.push(future_states(&move |r: &TickRecord| r.agents[a])?);
        }
        let privileged: Vec<PrivilegedInfo> =
            gt[1..].iter().map(privileged_from_future).collect();
        let ctx = PlanningContext {
            ego: AgentObservation {
                state: now.ego,
                history: vec![],
                bbox: scenario.ego_bbox,
            },
            agents: now
                .agents
                .iter()
                .zip(&scenario.agents_init)
                .map(|(s, init)| AgentObservation {
                    state: *s,
                    history: vec![],
                    bbox: init.bbox,
                })
                .collect(),
            lanes: scenario.lanes.clone(),
            route: scenario.route.clone(),
            speed_limit: scenario.speed_limit,
            privileged: Some(privileged),
        };
        let mut sets: Vec<CandidateSet> = vec![sample_candidates(&now.ego, sampler)?];
        for s in &now.agents {
            sets.push(sample_candidates(s, sampler)?);
        }
        scenes.push(TrainingScene { ctx, sets, gt });
        t += stride;
    }
    Ok(scenes)
}

/// Standard vehicle body used by the built-in scenarios.
pub fn default_bbox() -> BoundingBox {
    BoundingBox::new(4.5, 2.0).expect("valid box")
}

fn straight_lane(y: f64, x0: f64, x1: f64, width: f64) -> Lane {
    Lane {
        centerline: Polyline::new(vec![Point::new(x0, y), Point::new(x1, y)])
            .expect("valid centerline"),
        width,
    }
}

/// Empty straight road: trivial success case.
pub fn empty_road_scenario(seed: u64) -> Scenario {
    Scenario {
        name: "empty_road".into(),
        lanes: vec![straight_lane(0.0, -20.0, 200.0, 3.5)],
        route: Polyline::new(vec![Point::new(-20.0, 0.0), Point::new(200.0, 0.0)])
            .expect("valid route"),
        goal: Goal {
            point: Point::new(90.0, 0.0),
            radius: 5.0,
        },
        ego_init: KinematicState::new(0.0, 0.0, 0.0, 7.0),
        ego_bbox: default_bbox(),
        agents_init: vec![],
        time_budget: 30.0,
        seed,
        speed_limit: 8.0,
    }
}

/// The committed dense-merge setting: the ego's lane ends and it must merge
/// into a steady stream of left-lane traffic to reach its goal. The time
/// budget is tight enough that stopping at the lane end and waiting for the
/// whole stream to pass runs out the clock; finishing requires merging into
/// a gap that traffic must open up. Per-seed randomness: left-lane desired
/// speeds in [5, 9] m/s and inter-agent gaps in [12, 18] m.
pub fn dense_merge_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Spaced so that adjacent-lane traffic sits just outside the safety
    // margin; the merge still requires crossing through occupied space.
    let lane_width = 4.0;
    let left_y = 4.0;
    // The ramp tapers toward the main lane so that its end touches the
    // main-lane corridor: a vehicle that runs out of ramp is positioned to
    // merge from rest instead of being walled off.
    let ramp = Lane {
        centerline: Polyline::new(vec![
            Point::new(-120.0, 0.0),
            Point::new(30.0, 0.0),
            Point::new(58.0, 2.0),
        ])
        .expect("valid centerline"),
        width: lane_width,
    };
    let lanes = vec![ramp, straight_lane(left_y, -120.0, 260.0, lane_width)];
    let route = Polyline::new(vec![
        Point::new(-20.0, 0.0),
        Point::new(18.0, 0.0),
        Point::new(42.0, left_y),
        Point::new(260.0, left_y),
    ])
    .expect("valid route");

    let mut agents = Vec::new();
    let mut x = 20.0;
    for _ in 0..8 {
        let desired: f64 = rng.gen_range(5.0..9.0);
        agents.push(ScenarioAgent {
            state: KinematicState::new(x, left_y, 0.0, desired),
            bbox: default_bbox(),
            behavior: BehaviorParams {
                desired_speed: desired,
                ..Default::default()
            },
        });
        x -= rng.gen_range(12.0..18.0);
    }

    Scenario {
        name: "dense_merge".into(),
        lanes,
        route,
        goal: Goal {
            point: Point::new(150.0, left_y),
            radius: 6.0,
        },
        ego_init: KinematicState::new(6.0, 0.0, 0.0, 5.0),
        ego_bbox: default_bbox(),
        agents_init: agents,
        time_budget: 35.0,
        seed,
        speed_limit: 9.0,
    }
}

/// Seed set committed for the merge benchmark.
pub fn merge_benchmark_scenarios(seeds: std::ops::Range<u64>) -> Vec<Scenario> {
    seeds.map(dense_merge_scenario).collect()
}
