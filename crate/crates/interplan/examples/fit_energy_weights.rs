//! Fit energy weights from logged episodes: run a small car-following
//! scene, slice the trace into supervised scenes, and descend the
//! prediction/planning loss starting from perturbed weights.

use interplan::energy::EnergyWeights;
use interplan::geometry::{Point, Polyline};
use interplan::learning::{fit_weights, InferenceBackend, OptimizerOptions};
use interplan::planner::PlanMode;
use interplan::simworld::{
    default_bbox, run_episode, training_scenes_from_trace, BehaviorParams, Goal, Scenario,
    ScenarioAgent, SimOptions,
};
use interplan::trajectory::{KinematicState, SamplerProfile};

fn main() -> anyhow::Result<()> {
    let line = Polyline::new(vec![Point::new(-20.0, 0.0), Point::new(140.0, 0.0)])?;
    let scenario = Scenario {
        name: "follow".into(),
        lanes: vec![interplan::energy::Lane {
            centerline: line.clone(),
            width: 4.0,
        }],
        route: line,
        goal: Goal {
            point: Point::new(90.0, 0.0),
            radius: 6.0,
        },
        ego_init: KinematicState::new(0.0, 0.0, 0.0, 5.0),
        ego_bbox: default_bbox(),
        agents_init: vec![ScenarioAgent {
            state: KinematicState::new(16.0, 0.0, 0.0, 4.0),
            bbox: default_bbox(),
            behavior: BehaviorParams {
                desired_speed: 4.0,
                ..Default::default()
            },
        }],
        time_budget: 12.0,
        seed: 0,
        speed_limit: 8.0,
    };
    // a small candidate set keeps the exact-gradient corpus cheap
    let opts = SimOptions {
        sampler: SamplerProfile {
            k: 6,
            accelerations: vec![-2.0, 0.0, 1.0],
            curvatures: vec![0.0, 0.03, -0.03],
            curvature_rates: vec![0.01],
            ..Default::default()
        },
        ..Default::default()
    };
    let weights = EnergyWeights::default_base();
    let trace = run_episode(&scenario, &weights, PlanMode::Interactive, &opts)?;
    let scenes = training_scenes_from_trace(&trace, 3)?;
    println!("{} supervised scenes from one episode", scenes.len());

    let mut init = weights.clone();
    for w in &mut init.w {
        *w *= 0.3; // start away from the logging policy's weights
    }
    let (fitted, report) = fit_weights(
        &scenes,
        &init,
        &OptimizerOptions::default(),
        &InferenceBackend::Exact,
    )?;
    println!(
        "loss {:.4} -> {:.4} over {} accepted steps",
        report.losses.first().unwrap(),
        report.losses.last().unwrap(),
        report.steps_taken
    );
    println!("initial w: {:?}", init.w);
    println!("fitted  w: {:?}", fitted.w);
    Ok(())
}
