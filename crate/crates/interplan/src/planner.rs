//! Ego plan selection by expected-cost minimization.
//!
//! Interactive mode runs one conditioned inference per ego candidate, so the
//! expected safety and agent terms reflect how other agents would react to
//! that candidate. The non-interactive baseline infers other agents'
//! marginals once, ignoring the ego plan, and evaluates the same cost form.

use serde::{Deserialize, Serialize};

use crate::energy::{build_energy_tables, EnergyTables, EnergyWeights, Lane, PlanningContext};
use crate::error::{Error, Result};
use crate::inference::{
    conditional_mrf_from_tables, lbp_marginals, unconditional_mrf_from_tables,
    ConditionalMarginals, LbpOptions,
};
use crate::trajectory::{CandidateSet, Trajectory};

/// Agents farther than this from the ego at plan time are left out of the MRF.
pub const AGENT_DROP_RADIUS: f64 = 30.0;
/// At most this many agents enter the MRF (nearest first).
pub const MAX_MRF_AGENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Interactive,
    NonInteractive,
}

impl std::fmt::Display for PlanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlanMode::Interactive => write!(f, "interactive"),
            PlanMode::NonInteractive => write!(f, "non_interactive"),
        }
    }
}

/// Outcome of one planning cycle.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub chosen_index: usize,
    pub chosen_trajectory: Trajectory,
    /// Expected cost per ego candidate.
    pub costs: Vec<f64>,
    /// Marginals backing the chosen candidate (conditioned on it in
    /// interactive mode, ego-independent otherwise), over `included_agents`.
    pub predictions: ConditionalMarginals,
    /// Context agent indices that entered the MRF, in node order.
    pub included_agents: Vec<usize>,
    pub mode: PlanMode,
}

/// The expected-cost form shared by both modes: ego agent + goal terms plus
/// the marginal expectation of the other agents' agent and ego-safety terms.
/// The agent-agent interaction term is excluded from the cost (it still
/// shapes the marginals through the MRF's pairwise potentials).
fn expected_cost(
    ego_index: usize,
    tables: &EnergyTables,
    marginals: &ConditionalMarginals,
) -> Result<f64> {
    let k = tables.scores.k();
    if ego_index >= k {
        return Err(Error::IndexOutOfRange(format!("ego candidate {ego_index}")));
    }
    let n = tables.ego_agent_safety.len();
    if marginals.unary.len() != n {
        return Err(Error::Shape(format!(
            "marginals cover {} agents, tables have {n}",
            marginals.unary.len()
        )));
    }
    let mut cost = tables.scores.get(ego_index, 0) + tables.goal[ego_index];
    for (i, row) in marginals.unary.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Shape(format!("marginal row {i} has {} entries", row.len())));
        }
        for (l, &p) in row.iter().enumerate() {
            cost += p * (tables.scores.get(l, i + 1) + tables.ego_agent_safety[i][ego_index][l]);
        }
    }
    Ok(cost)
}

/// Collision-grade surcharge for ego candidates that leave every lane
/// corridor at any step. The simulator treats leaving the drivable area as
/// a terminal failure, so the planner prices it like a crash; without this,
/// open ground next to the road reads as a free escape from dense traffic.
pub fn off_lane_penalty(set: &CandidateSet, lanes: &[Lane], weight: f64) -> Vec<f64> {
    set.candidates()
        .iter()
        .map(|traj| {
            let off = traj.states().iter().any(|s| {
                let p = s.position();
                !lanes
                    .iter()
                    .any(|l| l.centerline.distance_to(p) <= l.width * 0.5)
            });
            if off {
                weight
            } else {
                0.0
            }
        })
        .collect()
}

/// Expected cost of one ego candidate under ego-conditioned marginals.
pub fn interactive_cost(
    ego_index: usize,
    ctx: &PlanningContext,
    sets: &[CandidateSet],
    weights: &EnergyWeights,
    marginals: &ConditionalMarginals,
) -> Result<f64> {
    let tables = build_energy_tables(ctx, sets, weights)?;
    let penalty = off_lane_penalty(&sets[0], &ctx.lanes, weights.safety_collision_weight);
    Ok(expected_cost(ego_index, &tables, marginals)? + penalty[ego_index])
}

/// Expected cost of one ego candidate under ego-independent marginals.
pub fn noninteractive_cost(
    ego_index: usize,
    ctx: &PlanningContext,
    sets: &[CandidateSet],
    weights: &EnergyWeights,
    marginals_unconditioned: &ConditionalMarginals,
) -> Result<f64> {
    let tables = build_energy_tables(ctx, sets, weights)?;
    let penalty = off_lane_penalty(&sets[0], &ctx.lanes, weights.safety_collision_weight);
    Ok(expected_cost(ego_index, &tables, marginals_unconditioned)? + penalty[ego_index])
}

/// Restrict a context to the agents the MRF will model: within
/// [`AGENT_DROP_RADIUS`] of the ego, nearest [`MAX_MRF_AGENTS`] kept,
/// original order preserved. Returns the filtered context, matching
/// candidate sets, and the kept agent indices.
pub fn filter_context(
    ctx: &PlanningContext,
    sets: &[CandidateSet],
) -> Result<(PlanningContext, Vec<CandidateSet>, Vec<usize>)> {
    if sets.len() != ctx.n_agents() + 1 {
        return Err(Error::Shape(format!(
            "expected {} candidate sets, got {}",
            ctx.n_agents() + 1,
            sets.len()
        )));
    }
    let ego_pos = ctx.ego.state.position();
    let mut by_distance: Vec<(usize, f64)> = ctx
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| (i, a.state.position().dist(ego_pos)))
        .filter(|(_, d)| *d <= AGENT_DROP_RADIUS)
        .collect();
    by_distance.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"));
    let mut kept: Vec<usize> = by_distance
        .into_iter()
        .take(MAX_MRF_AGENTS)
        .map(|(i, _)| i)
        .collect();
    kept.sort_unstable();

    let mut filtered = ctx.clone();
    filtered.agents = kept.iter().map(|&i| ctx.agents[i].clone()).collect();
    filtered.privileged = ctx
        .privileged
        .as_ref()
        .map(|p| kept.iter().map(|&i| p[i]).collect());
    let mut filtered_sets = vec![sets[0].clone()];
    filtered_sets.extend(kept.iter().map(|&i| sets[i + 1].clone()));
    Ok((filtered, filtered_sets, kept))
}

/// Pick the ego candidate with minimal expected cost.
///
/// Interactive mode runs one conditioned inference per ego candidate;
/// non-interactive mode runs a single unconditioned inference shared by all
/// candidates. Ties break to the lowest index.
pub fn plan(
    ctx: &PlanningContext,
    sets: &[CandidateSet],
    weights: &EnergyWeights,
    mode: PlanMode,
    lbp_opts: &LbpOptions,
) -> Result<PlanResult> {
    if sets.is_empty() || sets[0].k() == 0 {
        return Err(Error::Planning("no ego candidates".into()));
    }
    let (fctx, fsets, included_agents) = filter_context(ctx, sets)?;
    let tables = build_energy_tables(&fctx, &fsets, weights)?;
    let penalty = off_lane_penalty(&fsets[0], &fctx.lanes, weights.safety_collision_weight);
    let k = tables.scores.k();

    let (costs, predictions) = match mode {
        PlanMode::Interactive => {
            let mut costs = Vec::with_capacity(k);
            let mut all_marginals = Vec::with_capacity(k);
            for ego_index in 0..k {
                let mrf = conditional_mrf_from_tables(&tables, ego_index)?;
                let marginals = lbp_marginals(&mrf, lbp_opts)?;
                costs.push(expected_cost(ego_index, &tables, &marginals)? + penalty[ego_index]);
                all_marginals.push(marginals);
            }
            (costs, all_marginals)
        }
        PlanMode::NonInteractive => {
            let mrf = unconditional_mrf_from_tables(&tables)?;
            let marginals = lbp_marginals(&mrf, lbp_opts)?;
            let costs = (0..k)
                .map(|ego_index| {
                    Ok(expected_cost(ego_index, &tables, &marginals)? + penalty[ego_index])
                })
                .collect::<Result<Vec<_>>>()?;
            (costs, vec![marginals])
        }
    };

    let mut chosen_index = None;
    let mut best = f64::INFINITY;
    for (i, &c) in costs.iter().enumerate() {
        if c < best {
            best = c;
            chosen_index = Some(i);
        }
    }
    let chosen_index = chosen_index.ok_or_else(|| {
        Error::Planning("all candidate costs are infinite or NaN".into())
    })?;
    let predictions = match mode {
        PlanMode::Interactive => predictions.into_iter().nth(chosen_index).expect("k results"),
        PlanMode::NonInteractive => predictions.into_iter().next().expect("one result"),
    };
    Ok(PlanResult {
        chosen_index,
        chosen_trajectory: sets[0].get(chosen_index)?.clone(),
        costs,
        predictions,
        included_agents,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{AgentObservation, Lane};
    use crate::geometry::{Point, Polyline};
    use crate::inference::enumerate_exact;
    use crate::trajectory::{sample_candidates, BoundingBox, KinematicState, SamplerProfile};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_profile(k: usize) -> SamplerProfile {
        SamplerProfile {
            accelerations: vec![-2.0, 0.0, 1.0, 2.0][..k.min(4)].to_vec(),
            curvatures: vec![],
            curvature_rates: vec![],
            k,
            ..Default::default()
        }
    }

    fn ctx_with_agents(agent_states: &[KinematicState]) -> PlanningContext {
        let route = Polyline::new(vec![Point::new(-10.0, 0.0), Point::new(300.0, 0.0)]).unwrap();
        let bbox = BoundingBox::new(4.5, 2.0).unwrap();
        PlanningContext {
            ego: AgentObservation {
                state: KinematicState::new(0.0, 0.0, 0.0, 5.0),
                history: vec![],
                bbox,
            },
            agents: agent_states
                .iter()
                .map(|s| AgentObservation {
                    state: *s,
                    history: vec![],
                    bbox,
                })
                .collect(),
            lanes: vec![Lane {
                centerline: route.clone(),
                width: 3.5,
            }],
            route,
            speed_limit: 8.0,
            privileged: None,
        }
    }

    fn sets_for(ctx: &PlanningContext, k: usize) -> Vec<CandidateSet> {
        std::iter::once(&ctx.ego)
            .chain(ctx.agents.iter())
            .map(|a| sample_candidates(&a.state, &small_profile(k)).unwrap())
            .collect()
    }

    #[test]
    fn single_candidate_chosen_regardless_of_mode() {
        let ctx = ctx_with_agents(&[KinematicState::new(15.0, 3.0, 0.0, 5.0)]);
        let sets = sets_for(&ctx, 1);
        let w = EnergyWeights::default_base();
        for mode in [PlanMode::Interactive, PlanMode::NonInteractive] {
            let r = plan(&ctx, &sets, &w, mode, &LbpOptions::default()).unwrap();
            assert_eq!(r.chosen_index, 0);
        }
    }

    #[test]
    fn no_agents_reduces_to_ego_terms() {
        let ctx = ctx_with_agents(&[]);
        let sets = sets_for(&ctx, 3);
        let w = EnergyWeights::default_base();
        let tables = build_energy_tables(&ctx, &sets, &w).unwrap();
        let r = plan(&ctx, &sets, &w, PlanMode::Interactive, &LbpOptions::default()).unwrap();
        for (i, &c) in r.costs.iter().enumerate() {
            assert_relative_eq!(c, tables.scores.get(i, 0) + tables.goal[i], epsilon = 1e-12);
        }
        let rn = plan(&ctx, &sets, &w, PlanMode::NonInteractive, &LbpOptions::default()).unwrap();
        assert_eq!(r.chosen_index, rn.chosen_index);
        assert_eq!(r.costs, rn.costs);
    }

    #[test]
    fn hand_expanded_expectation_single_agent() {
        // N = 1, K = 2: cost must equal the explicit 2-assignment expectation
        let ctx = ctx_with_agents(&[KinematicState::new(12.0, 2.5, 0.0, 4.0)]);
        let sets = sets_for(&ctx, 2);
        let w = EnergyWeights::default_base();
        let tables = build_energy_tables(&ctx, &sets, &w).unwrap();
        for ego_index in 0..2 {
            let mrf = conditional_mrf_from_tables(&tables, ego_index).unwrap();
            let marginals = enumerate_exact(&mrf).unwrap();
            let p = &marginals.unary[0];
            let mut hand = tables.scores.get(ego_index, 0) + tables.goal[ego_index];
            for l in 0..2 {
                hand += p[l] * (tables.scores.get(l, 1) + tables.ego_agent_safety[0][ego_index][l]);
            }
            let got = expected_cost(ego_index, &tables, &marginals).unwrap();
            assert_relative_eq!(got, hand, epsilon = 1e-12);
        }
    }

    #[test]
    fn distant_agents_make_modes_agree() {
        let ctx = ctx_with_agents(&[
            KinematicState::new(0.0, 25.0, 0.0, 5.0),
            KinematicState::new(0.0, -25.0, 0.0, 5.0),
        ]);
        let sets = sets_for(&ctx, 3);
        let w = EnergyWeights::default_base();
        let ri = plan(&ctx, &sets, &w, PlanMode::Interactive, &LbpOptions::default()).unwrap();
        let rn = plan(&ctx, &sets, &w, PlanMode::NonInteractive, &LbpOptions::default()).unwrap();
        assert_eq!(ri.chosen_index, rn.chosen_index);
        for (a, b) in ri.costs.iter().zip(&rn.costs) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn interactive_plan_matches_enumeration_backed_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..6 {
            let agents: Vec<KinematicState> = (0..2)
                .map(|_| {
                    KinematicState::new(
                        rng.gen_range(5.0..20.0),
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(2.0..7.0),
                    )
                })
                .collect();
            let ctx = ctx_with_agents(&agents);
            let sets = sets_for(&ctx, 3);
            let w = EnergyWeights::default_base();
            let tables = build_energy_tables(&ctx, &sets, &w).unwrap();

            // oracle: exact marginals per ego candidate
            let mut oracle_costs = Vec::new();
            for ego_index in 0..3 {
                let mrf = conditional_mrf_from_tables(&tables, ego_index).unwrap();
                let exact = enumerate_exact(&mrf).unwrap();
                oracle_costs.push(expected_cost(ego_index, &tables, &exact).unwrap());
            }
            let oracle_idx = oracle_costs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;

            let opts = LbpOptions {
                max_iterations: 200,
                tolerance: 1e-12,
                ..Default::default()
            };
            let r = plan(&ctx, &sets, &w, PlanMode::Interactive, &opts).unwrap();
            assert_eq!(r.chosen_index, oracle_idx);
        }
    }

    #[test]
    fn exact_cost_equals_full_expectation_expansion() {
        let ctx = ctx_with_agents(&[
            KinematicState::new(10.0, 2.0, 0.0, 4.0),
            KinematicState::new(14.0, -2.0, 0.1, 5.0),
        ]);
        let sets = sets_for(&ctx, 3);
        let w = EnergyWeights::default_base();
        let tables = build_energy_tables(&ctx, &sets, &w).unwrap();
        let ego_index = 1;
        let mrf = conditional_mrf_from_tables(&tables, ego_index).unwrap();
        let exact = enumerate_exact(&mrf).unwrap();
        let got = expected_cost(ego_index, &tables, &exact).unwrap();

        // brute force over all 3^2 assignments with exact joint probabilities
        let log_z = exact.log_partition.unwrap();
        let mut expectation = 0.0;
        for a0 in 0..3 {
            for a1 in 0..3 {
                let mut lw = mrf.log_unary()[0][a0] + mrf.log_unary()[1][a1];
                if let Some(t) = mrf.log_pairwise().get(&(0, 1)) {
                    lw += t[a0][a1];
                }
                let p = (lw - log_z).exp();
                let mut inner = 0.0;
                for (i, &ai) in [a0, a1].iter().enumerate() {
                    inner += tables.scores.get(ai, i + 1)
                        + tables.ego_agent_safety[i][ego_index][ai];
                }
                expectation += p * inner;
            }
        }
        let hand = tables.scores.get(ego_index, 0) + tables.goal[ego_index] + expectation;
        assert_relative_eq!(got, hand, epsilon = 1e-9);
    }

    #[test]
    fn positive_scaling_preserves_argmin_without_interaction() {
        let ctx = ctx_with_agents(&[KinematicState::new(0.0, 28.0, 0.0, 5.0)]);
        let sets = sets_for(&ctx, 4);
        let w1 = EnergyWeights::default_base();
        let mut w2 = w1.clone();
        for v in &mut w2.w {
            *v *= 2.0;
        }
        let r1 = plan(&ctx, &sets, &w1, PlanMode::Interactive, &LbpOptions::default()).unwrap();
        let r2 = plan(&ctx, &sets, &w2, PlanMode::Interactive, &LbpOptions::default()).unwrap();
        assert_eq!(r1.chosen_index, r2.chosen_index);
    }

    #[test]
    fn plan_deterministic() {
        let ctx = ctx_with_agents(&[
            KinematicState::new(10.0, 2.0, 0.0, 4.0),
            KinematicState::new(14.0, -2.0, 0.1, 5.0),
        ]);
        let sets = sets_for(&ctx, 3);
        let w = EnergyWeights::default_base();
        let a = plan(&ctx, &sets, &w, PlanMode::Interactive, &LbpOptions::default()).unwrap();
        let b = plan(&ctx, &sets, &w, PlanMode::Interactive, &LbpOptions::default()).unwrap();
        assert_eq!(a.chosen_index, b.chosen_index);
        assert_eq!(a.costs, b.costs);
    }

    #[test]
    fn far_agents_filtered_from_mrf() {
        let ctx = ctx_with_agents(&[
            KinematicState::new(10.0, 2.0, 0.0, 4.0),
            KinematicState::new(200.0, 0.0, 0.0, 5.0), // beyond drop radius
        ]);
        let sets = sets_for(&ctx, 3);
        let w = EnergyWeights::default_base();
        let r = plan(&ctx, &sets, &w, PlanMode::Interactive, &LbpOptions::default()).unwrap();
        assert_eq!(r.included_agents, vec![0]);
        assert_eq!(r.predictions.unary.len(), 1);
    }
}
