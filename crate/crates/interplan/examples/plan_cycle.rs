//! One planning cycle on the dense lane-merge scene: build the context,
//! plan in both modes, and show how conditioning changes the predicted
//! agent behavior and the chosen ego candidate.
//!
//! Usage: plan_cycle [seed]

use interplan::energy::{AgentObservation, EnergyWeights, PlanningContext};
use interplan::inference::LbpOptions;
use interplan::planner::{plan, PlanMode};
use interplan::simworld::dense_merge_scenario;
use interplan::trajectory::sample_candidates;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let scenario = dense_merge_scenario(seed);
    let weights = EnergyWeights::default_base();
    let sampler = interplan::trajectory::SamplerProfile::default();

    let ctx = PlanningContext {
        ego: AgentObservation {
            state: scenario.ego_init,
            history: vec![],
            bbox: scenario.ego_bbox,
        },
        agents: scenario
            .agents_init
            .iter()
            .map(|a| AgentObservation {
                state: a.state,
                history: vec![],
                bbox: a.bbox,
            })
            .collect(),
        lanes: scenario.lanes.clone(),
        route: scenario.route.clone(),
        speed_limit: scenario.speed_limit,
        privileged: None,
    };
    let mut sets = vec![sample_candidates(&scenario.ego_init, &sampler)?];
    for a in &scenario.agents_init {
        sets.push(sample_candidates(&a.state, &sampler)?);
    }

    for mode in [PlanMode::Interactive, PlanMode::NonInteractive] {
        let result = plan(&ctx, &sets, &weights, mode, &LbpOptions::default())?;
        let end = result.chosen_trajectory.end();
        println!(
            "{mode}: candidate {} (cost {:.2}) ending at ({:.1}, {:.1}), v {:.1} m/s",
            result.chosen_index,
            result.costs[result.chosen_index],
            end.x,
            end.y,
            end.speed
        );
        for (node, &agent) in result.included_agents.iter().enumerate() {
            let row = &result.predictions.unary[node];
            let (best, p) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty row");
            println!("  agent {agent}: most likely candidate {best} with p = {p:.2}");
        }
    }
    Ok(())
}
