//! Closed-loop comparison of interactive vs. non-interactive planning on
//! the dense lane-merge scenario.
//!
//! Runs one episode per seed in both modes and prints success rate (SR),
//! right-lane rate (RL), and failure breakdowns.
//!
//! Usage: merge_benchmark [n_seeds]

use interplan::energy::EnergyWeights;
use interplan::planner::PlanMode;
use interplan::simworld::{
    dense_merge_scenario, metrics_from_traces, run_episode, EpisodeTrace, Event, SimOptions,
};
use rayon::prelude::*;

fn main() -> anyhow::Result<()> {
    let n: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(20);
    let weights = EnergyWeights::default_base();
    let opts = SimOptions::default();

    for mode in [PlanMode::Interactive, PlanMode::NonInteractive] {
        let traces: Vec<EpisodeTrace> = (0..n)
            .into_par_iter()
            .map(|seed| {
                run_episode(&dense_merge_scenario(seed), &weights, mode, &opts)
                    .expect("episode runs")
            })
            .collect();
        let metrics = metrics_from_traces(&traces);
        let off_lane = traces
            .iter()
            .filter(|t| t.terminal_event() == Some(Event::OffLane))
            .count();
        let mean_plan_ms = traces
            .iter()
            .flat_map(|t| t.plan_times.iter())
            .sum::<f64>()
            / traces.iter().map(|t| t.plan_times.len()).sum::<usize>() as f64
            * 1e3;
        println!(
            "{mode:>16}: SR {:.2}  RL {:.2}  collisions {}  timeouts {}  off-lane {off_lane}  plan {:.1} ms/cycle",
            metrics.success_rate, metrics.right_lane_rate, metrics.collisions, metrics.timeouts,
            mean_plan_ms
        );
        // per-seed outcomes for debugging
        let outcomes: Vec<String> = traces
            .iter()
            .map(|t| match t.terminal_event() {
                Some(Event::GoalReached) => "G".into(),
                Some(Event::Collision) => "C".into(),
                Some(Event::Timeout) => "T".into(),
                Some(Event::OffLane) => "O".into(),
                Some(Event::PlannerFailure) => "F".into(),
                None => "?".into(),
            })
            .collect();
        println!("{:>16}  {}", "", outcomes.join(""));
    }
    Ok(())
}
