//! Teacher-student distillation on the committed toy corpus: fit a teacher
//! with privileged future features, then a student with and without the
//! gated plan-distillation term, and compare held-out losses.
//!
//! Run from the repository root so the committed traces resolve.

use std::fs::File;
use std::io::BufReader;

use interplan::energy::EnergyWeights;
use interplan::inference::LbpOptions;
use interplan::learning::{
    corpus_loss, filter_representable_scenes, fit_distilled_weights, fit_weights,
    InferenceBackend, OptimizerOptions, TrainingScene,
};
use interplan::simworld::{training_scenes_from_trace, EpisodeTrace};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let backend = InferenceBackend::Lbp(LbpOptions::default());
    let opts = OptimizerOptions {
        steps: 200,
        ..Default::default()
    };
    let lambda_dp = 0.05;

    let mut scenes: Vec<TrainingScene> = Vec::new();
    for i in 0..3 {
        let path = format!("crates/interplan/tests/data/toy_trace_{i}.jsonl");
        let trace = EpisodeTrace::read_jsonl(BufReader::new(File::open(&path)?))?;
        scenes.extend(training_scenes_from_trace(&trace, 3)?);
    }
    let (mut scenes, dropped) = filter_representable_scenes(
        scenes,
        &EnergyWeights::default_base(),
        opts.epsilon,
        &backend,
    )?;
    println!("{} scenes ({dropped} dropped as unrepresentable)", scenes.len());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    scenes.shuffle(&mut rng);
    let (holdout, train) = scenes.split_at(scenes.len() / 2);

    let (teacher, _) = fit_weights(train, &EnergyWeights::default_privileged(), &opts, &backend)?;
    let student_init = EnergyWeights::default_base();
    let (plain, _) = fit_weights(train, &student_init, &opts, &backend)?;
    let (distilled, _) =
        fit_distilled_weights(train, &student_init, &teacher, lambda_dp, &opts, &backend)?;

    let eval = |w: &EnergyWeights| corpus_loss(holdout, w, opts.epsilon, &backend);
    println!("held-out loss, teacher:             {:.4}", eval(&teacher)?);
    println!("held-out loss, student (plain):     {:.4}", eval(&plain)?);
    println!("held-out loss, student (distilled): {:.4}", eval(&distilled)?);
    Ok(())
}
