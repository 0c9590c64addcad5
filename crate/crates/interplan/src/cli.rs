//! Command-line front end: scenario running, batch evaluation, inference
//! debugging, weight fitting, the distillation demo, and trace plotting.
//!
//! Every subcommand is deterministic given the config file and seeds. All
//! structured outputs (JSON-lines traces, CSV reports, JSON reports, SVG
//! frames) carry a schema version field in their header.

use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyWeights;
use crate::error::{Error, Result};
use crate::inference::{enumerate_exact, lbp_marginals, total_variation, PairwiseMRF};
use crate::learning::{
    filter_representable_scenes,
    corpus_loss, corpus_loss_and_gradient, fit_distilled_weights, fit_weights, InferenceBackend,
    LossWeights, OptimizerOptions, TrainingScene,
};
use crate::planner::PlanMode;
use crate::simworld::{
    dense_merge_scenario, empty_road_scenario, metrics_from_traces, right_lane_fraction,
    run_episode, training_scenes_from_trace, EpisodeTrace, Event, Scenario, SimOptions,
};
use crate::trajectory::{sample_candidates, KinematicState, Trajectory};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "INTERPLAN_CONFIG";

/// Version stamped into every CSV/JSON/SVG output header; bump on schema
/// changes. Trace files carry their own version (see `simworld`).
pub const OUTPUT_SCHEMA_VERSION: u32 = 1;

/// Planning mode selector accepted on the command line and in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Interactive,
    NonInteractive,
    /// Run or evaluate both modes side by side.
    Both,
}

impl ModeArg {
    fn plan_modes(self) -> Vec<PlanMode> {
        match self {
            ModeArg::Interactive => vec![PlanMode::Interactive],
            ModeArg::NonInteractive => vec![PlanMode::NonInteractive],
            ModeArg::Both => vec![PlanMode::Interactive, PlanMode::NonInteractive],
        }
    }
}

/// The single structured config file behind every subcommand. Every field
/// defaults, so an empty file (or no file at all) is valid; command-line
/// flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Built-in scenario name: "dense_merge" or "empty_road". Ignored when
    /// `scenario_path` is set.
    pub scenario: String,
    /// TOML file holding a full scenario description.
    pub scenario_path: Option<PathBuf>,
    /// Planning mode; `run` defaults to interactive and `eval` to both when
    /// unset.
    pub mode: Option<ModeArg>,
    /// Episode seeds; one episode per seed and mode.
    pub seeds: Vec<u64>,
    /// When nonzero, truncates or consecutively extends `seeds` to this
    /// many episodes.
    pub episodes: usize,
    /// Worker threads for episode-level parallelism; 0 picks the machine
    /// default.
    pub workers: usize,
    /// Output directory for traces, reports, and frames.
    pub out: PathBuf,
    /// JSON file with energy weights; built-in defaults when unset.
    pub weights_path: Option<PathBuf>,
    /// Closed-loop knobs: replan period, sampler profile, LBP options.
    pub sim: SimOptions,
    /// Loss mixing coefficients for fitting and distillation.
    pub loss_weights: LossWeights,
    /// Gradient-descent knobs, including the near-duplicate radius epsilon.
    pub optimizer: OptimizerOptions,
    /// Tick stride when slicing traces into training scenes.
    pub stride: usize,
    /// Fraction of scenes held out for the distillation report.
    pub holdout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "dense_merge".into(),
            scenario_path: None,
            mode: None,
            seeds: vec![0],
            episodes: 0,
            workers: 0,
            out: PathBuf::from("out"),
            weights_path: None,
            sim: SimOptions::default(),
            loss_weights: LossWeights::default(),
            optimizer: OptimizerOptions::default(),
            stride: 2,
            holdout: 0.5,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.sampler.validate()?;
        self.sim.lbp.validate()?;
        self.loss_weights.validate()?;
        if self.sim.replan_period <= 0.0 {
            return Err(Error::Config("replan period must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config("holdout fraction must be in [0, 1)".into()));
        }
        if self.scenario_path.is_none()
            && !matches!(self.scenario.as_str(), "dense_merge" | "empty_road")
        {
            return Err(Error::Config(format!(
                "unknown built-in scenario '{}' (expected dense_merge or empty_road)",
                self.scenario
            )));
        }
        Ok(())
    }

    /// Final seed list: the configured seeds, truncated or consecutively
    /// extended when an episode count is set.
    pub fn effective_seeds(&self) -> Vec<u64> {
        let mut seeds = self.seeds.clone();
        if seeds.is_empty() {
            seeds.push(0);
        }
        if self.episodes > 0 {
            if self.episodes <= seeds.len() {
                seeds.truncate(self.episodes);
            } else {
                let mut next = seeds.last().unwrap().wrapping_add(1);
                while seeds.len() < self.episodes {
                    seeds.push(next);
                    next = next.wrapping_add(1);
                }
            }
        }
        seeds
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "interplan",
    version,
    about = "Interactive prediction and planning over discrete trajectory candidates"
)]
pub struct Cli {
    /// Config file (TOML); every field optional.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Planning mode override.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Episode seed; repeat the flag for several.
    #[arg(long, global = true)]
    pub seed: Vec<u64>,
    /// Episode count; extends or truncates the seed list.
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Worker threads; 0 picks the machine default.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run closed-loop episodes and write one JSON-lines trace per episode.
    Run,
    /// Run episodes and report SR/RL metrics as CSV plus a text table.
    Eval,
    /// Compare LBP against exact enumeration on a potentials fixture.
    Infer {
        /// JSON file with log_unary rows and log_pairwise edge tables.
        #[arg(long)]
        fixture: PathBuf,
    },
    /// Fit energy weights on logged traces; writes weights and a loss curve.
    Fit {
        /// Trace files used as supervision; repeat for several.
        #[arg(long = "trace")]
        traces: Vec<PathBuf>,
        /// Check the analytic gradient against central finite differences.
        #[arg(long)]
        gradient_check: bool,
    },
    /// Fit a privileged teacher, then a student with and without
    /// distillation; report held-out losses.
    Distill {
        /// Trace files used as supervision; repeat for several.
        #[arg(long = "trace")]
        traces: Vec<PathBuf>,
    },
    /// Render a trace into one SVG frame per tick.
    Plot {
        /// Trace file to render.
        #[arg(long)]
        trace: PathBuf,
    },
}

/// Parse arguments, run, and translate errors into the exit-code contract:
/// 0 success, 1 config error, 2 runtime failure.
pub fn run_cli() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::ConfigDecode(_) => 1,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text)?;
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(mode) = cli.mode {
        config.mode = Some(mode);
    }
    if !cli.seed.is_empty() {
        config.seeds = cli.seed.clone();
    }
    if let Some(episodes) = cli.episodes {
        config.episodes = episodes;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(out) = cli.out {
        config.out = out;
    }
    config.validate()?;
    match cli.command {
        Command::Run => cmd_run(&config),
        Command::Eval => cmd_eval(&config),
        Command::Infer { fixture } => cmd_infer(&config, &fixture),
        Command::Fit {
            traces,
            gradient_check,
        } => cmd_fit(&config, &traces, gradient_check),
        Command::Distill { traces } => cmd_distill(&config, &traces),
        Command::Plot { trace } => cmd_plot(&config, &trace),
    }
}

fn scenario_for_seed(config: &RunConfig, seed: u64) -> Result<Scenario> {
    let scenario = if let Some(path) = &config.scenario_path {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        let mut scenario: Scenario = toml::from_str(&text)?;
        scenario.seed = seed;
        scenario
    } else {
        match config.scenario.as_str() {
            "dense_merge" => dense_merge_scenario(seed),
            "empty_road" => empty_road_scenario(seed),
            other => return Err(Error::Config(format!("unknown built-in scenario '{other}'"))),
        }
    };
    scenario.validate()?;
    Ok(scenario)
}

fn load_weights(config: &RunConfig) -> Result<EnergyWeights> {
    let weights = match &config.weights_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read weights {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("weights file {}: {e}", path.display())))?
        }
        None => EnergyWeights::default_base(),
    };
    weights.validate()?;
    Ok(weights)
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Run one episode per (mode, seed) pair, in parallel across episodes.
fn run_episodes(
    config: &RunConfig,
    modes: &[PlanMode],
    seeds: &[u64],
) -> Result<Vec<(PlanMode, u64, EpisodeTrace)>> {
    let weights = load_weights(config)?;
    let jobs: Vec<(PlanMode, u64)> = modes
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = worker_pool(config.workers)?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(mode, seed)| {
                let scenario = scenario_for_seed(config, seed)?;
                let trace = run_episode(&scenario, &weights, mode, &config.sim)?;
                Ok((mode, seed, trace))
            })
            .collect()
    })
}

fn mean_plan_ms(traces: &[&EpisodeTrace]) -> f64 {
    let times: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.plan_times.iter().copied())
        .collect();
    if times.is_empty() {
        return 0.0;
    }
    1e3 * times.iter().sum::<f64>() / times.len() as f64
}

fn event_name(event: Option<Event>) -> &'static str {
    match event {
        Some(Event::Collision) => "collision",
        Some(Event::OffLane) => "off_lane",
        Some(Event::GoalReached) => "goal_reached",
        Some(Event::Timeout) => "timeout",
        Some(Event::PlannerFailure) => "planner_failure",
        None => "none",
    }
}

fn cmd_run(config: &RunConfig) -> Result<()> {
    let modes = config.mode.unwrap_or(ModeArg::Interactive).plan_modes();
    let seeds = config.effective_seeds();
    fs::create_dir_all(&config.out)?;
    let results = run_episodes(config, &modes, &seeds)?;
    println!("schema_version={OUTPUT_SCHEMA_VERSION}");
    for (mode, seed, trace) in &results {
        let path = config.out.join(format!("trace_{mode}_{seed}.jsonl"));
        let file = fs::File::create(&path)?;
        trace.write_jsonl(BufWriter::new(file))?;
        let time = trace.ticks.last().map(|t| t.time).unwrap_or(0.0);
        println!(
            "episode mode={mode} seed={seed} event={} ticks={} time={time:.1} rl={:.3} mean_plan_ms={:.1} trace={}",
            event_name(trace.terminal_event()),
            trace.ticks.len(),
            right_lane_fraction(trace),
            mean_plan_ms(&[trace]),
            path.display(),
        );
    }
    Ok(())
}

fn cmd_eval(config: &RunConfig) -> Result<()> {
    let modes = config.mode.unwrap_or(ModeArg::Both).plan_modes();
    let seeds = config.effective_seeds();
    fs::create_dir_all(&config.out)?;
    let results = run_episodes(config, &modes, &seeds)?;

    let mut csv = String::from("schema_version,mode,sr,rl,collisions,timeouts,mean_plan_ms\n");
    println!("schema_version={OUTPUT_SCHEMA_VERSION}");
    println!(
        "{:<16} {:>6} {:>6} {:>11} {:>9} {:>13}",
        "mode", "SR", "RL", "collisions", "timeouts", "mean_plan_ms"
    );
    for &mode in &modes {
        let traces: Vec<&EpisodeTrace> = results
            .iter()
            .filter(|(m, _, _)| *m == mode)
            .map(|(_, _, t)| t)
            .collect();
        let owned: Vec<EpisodeTrace> = traces.iter().map(|t| (*t).clone()).collect();
        let metrics = metrics_from_traces(&owned);
        let plan_ms = mean_plan_ms(&traces);
        writeln!(
            csv,
            "{OUTPUT_SCHEMA_VERSION},{mode},{:.4},{:.4},{},{},{:.2}",
            metrics.success_rate, metrics.right_lane_rate, metrics.collisions, metrics.timeouts,
            plan_ms
        )
        .expect("string write");
        println!(
            "{:<16} {:>6.2} {:>6.2} {:>11} {:>9} {:>13.1}",
            mode.to_string(),
            metrics.success_rate,
            metrics.right_lane_rate,
            metrics.collisions,
            metrics.timeouts,
            plan_ms
        );
    }
    let csv_path = config.out.join("eval.csv");
    fs::write(&csv_path, csv)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// On-disk MRF fixture for the `infer` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MrfFixture {
    pub schema_version: u32,
    /// Per-node log-unary rows; all nodes share the state count.
    pub log_unary: Vec<Vec<f64>>,
    /// Edge tables with i < j.
    #[serde(default)]
    pub log_pairwise: Vec<EdgeTable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeTable {
    pub i: usize,
    pub j: usize,
    pub table: Vec<Vec<f64>>,
}

impl MrfFixture {
    pub fn to_mrf(&self) -> Result<PairwiseMRF> {
        let mut pairwise = BTreeMap::new();
        for edge in &self.log_pairwise {
            pairwise.insert((edge.i, edge.j), edge.table.clone());
        }
        PairwiseMRF::new(self.log_unary.clone(), pairwise)
    }
}

fn cmd_infer(config: &RunConfig, fixture_path: &Path) -> Result<()> {
    let text = fs::read_to_string(fixture_path).map_err(|e| {
        Error::Config(format!("cannot read fixture {}: {e}", fixture_path.display()))
    })?;
    let fixture: MrfFixture = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("fixture {}: {e}", fixture_path.display())))?;
    let mrf = fixture.to_mrf()?;
    let lbp = lbp_marginals(&mrf, &config.sim.lbp)?;
    let exact = match enumerate_exact(&mrf) {
        Ok(m) => Some(m),
        Err(Error::Capacity { states, cap }) => {
            println!(
                "exact enumeration skipped: {states} assignments exceed the cap of {cap}; \
                 showing LBP marginals only"
            );
            None
        }
        Err(e) => return Err(e),
    };
    println!("schema_version={OUTPUT_SCHEMA_VERSION}");
    println!(
        "lbp converged={} after {} iterations",
        lbp.converged, lbp.iterations
    );
    for (i, row) in lbp.unary.iter().enumerate() {
        match &exact {
            Some(exact) => {
                let tv = total_variation(row, &exact.unary[i]);
                println!("node {i}  tv={tv:.3e}");
                for (s, (&l, &e)) in row.iter().zip(&exact.unary[i]).enumerate() {
                    println!("  state {s}  lbp={l:.9}  exact={e:.9}");
                }
            }
            None => {
                println!("node {i}");
                for (s, &l) in row.iter().enumerate() {
                    println!("  state {s}  lbp={l:.9}");
                }
            }
        }
    }
    Ok(())
}

fn load_scenes(config: &RunConfig, paths: &[PathBuf]) -> Result<Vec<TrainingScene>> {
    if paths.is_empty() {
        return Err(Error::Config(
            "no trace files given; pass at least one --trace".into(),
        ));
    }
    let mut scenes = Vec::new();
    for path in paths {
        let file = fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot read trace {}: {e}", path.display())))?;
        let trace = EpisodeTrace::read_jsonl(BufReader::new(file))?;
        scenes.extend(training_scenes_from_trace(&trace, config.stride)?);
    }
    let backend = InferenceBackend::Lbp(config.sim.lbp);
    let (scenes, dropped) = filter_representable_scenes(
        scenes,
        &load_weights(config)?,
        config.optimizer.epsilon,
        &backend,
    )?;
    if dropped > 0 {
        println!("skipped {dropped} scenes whose ground truth is unrepresentable at this K");
    }
    if scenes.is_empty() {
        return Err(Error::Config(
            "traces yielded no usable training scenes; episodes are shorter than one horizon \
             or every scene's ground truth is unrepresentable"
                .into(),
        ));
    }
    Ok(scenes)
}

fn cmd_fit(config: &RunConfig, traces: &[PathBuf], gradient_check: bool) -> Result<()> {
    let scenes = load_scenes(config, traces)?;
    let init = load_weights(config)?;
    let backend = InferenceBackend::Lbp(config.sim.lbp);
    println!("schema_version={OUTPUT_SCHEMA_VERSION}");
    println!("fitting on {} scenes from {} traces", scenes.len(), traces.len());

    if gradient_check {
        let err = gradient_check_max_rel_error(&scenes[..1], &init, config.optimizer.epsilon)?;
        println!("gradient check: max relative error {err:.3e}");
    }

    let (weights, report) = fit_weights(&scenes, &init, &config.optimizer, &backend)?;
    fs::create_dir_all(&config.out)?;
    let weights_path = config.out.join("weights.json");
    fs::write(&weights_path, serde_json::to_string_pretty(&weights)?)?;
    let mut csv = String::from("schema_version,step,loss\n");
    for (step, loss) in report.losses.iter().enumerate() {
        writeln!(csv, "{OUTPUT_SCHEMA_VERSION},{step},{loss:.9}").expect("string write");
    }
    let csv_path = config.out.join("fit_loss.csv");
    fs::write(&csv_path, csv)?;
    println!(
        "steps={} initial_loss={:.6} final_loss={:.6}",
        report.steps_taken,
        report.losses.first().copied().unwrap_or(f64::NAN),
        report.losses.last().copied().unwrap_or(f64::NAN),
    );
    println!("wrote {} and {}", weights_path.display(), csv_path.display());
    Ok(())
}

/// Central finite differences (h = 1e-5) against the analytic corpus
/// gradient; returns the worst per-coordinate relative error.
pub fn gradient_check_max_rel_error(
    scenes: &[TrainingScene],
    weights: &EnergyWeights,
    epsilon: f64,
) -> Result<f64> {
    let backend = InferenceBackend::Exact;
    let (_, grad) = corpus_loss_and_gradient(scenes, weights, epsilon, &backend)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for d in 0..weights.w.len() {
        let mut plus = weights.clone();
        plus.w[d] += h;
        let mut minus = weights.clone();
        minus.w[d] -= h;
        let (lp, _) = corpus_loss_and_gradient(scenes, &plus, epsilon, &backend)?;
        let (lm, _) = corpus_loss_and_gradient(scenes, &minus, epsilon, &backend)?;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (grad[d] - fd).abs() / grad[d].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Per-run distillation report written by `distill`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillReport {
    pub schema_version: u32,
    pub train_scenes: usize,
    pub holdout_scenes: usize,
    pub lambda: f64,
    pub teacher_heldout_loss: f64,
    pub undistilled_heldout_loss: f64,
    pub distilled_heldout_loss: f64,
}

fn cmd_distill(config: &RunConfig, traces: &[PathBuf]) -> Result<()> {
    let mut scenes = load_scenes(config, traces)?;
    if scenes.len() < 2 {
        return Err(Error::Config(
            "distillation needs at least 2 scenes to hold one out".into(),
        ));
    }
    let seed = config.effective_seeds()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scenes.shuffle(&mut rng);
    let holdout_len = ((scenes.len() as f64 * config.holdout).round() as usize)
        .clamp(1, scenes.len() - 1);
    let (holdout, train) = scenes.split_at(holdout_len);

    let backend = InferenceBackend::Lbp(config.sim.lbp);
    let opts = &config.optimizer;
    let lambda = config.loss_weights.lambda_d * config.loss_weights.lambda_dp;

    let (teacher, _) = fit_weights(train, &EnergyWeights::default_privileged(), opts, &backend)?;
    let student_init = load_weights(config)?;
    let (undistilled, _) = fit_weights(train, &student_init, opts, &backend)?;
    let (distilled, _) =
        fit_distilled_weights(train, &student_init, &teacher, lambda, opts, &backend)?;

    let epsilon = opts.epsilon;
    let report = DistillReport {
        schema_version: OUTPUT_SCHEMA_VERSION,
        train_scenes: train.len(),
        holdout_scenes: holdout.len(),
        lambda,
        teacher_heldout_loss: corpus_loss(holdout, &teacher, epsilon, &backend)?,
        undistilled_heldout_loss: corpus_loss(holdout, &undistilled, epsilon, &backend)?,
        distilled_heldout_loss: corpus_loss(holdout, &distilled, epsilon, &backend)?,
    };
    println!("schema_version={OUTPUT_SCHEMA_VERSION}");
    println!(
        "train={} holdout={} lambda={}",
        report.train_scenes, report.holdout_scenes, report.lambda
    );
    println!("teacher held-out loss      {:.6}", report.teacher_heldout_loss);
    println!("student without distill    {:.6}", report.undistilled_heldout_loss);
    println!("student with distill       {:.6}", report.distilled_heldout_loss);
    fs::create_dir_all(&config.out)?;
    let path = config.out.join("distill_report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_plot(config: &RunConfig, trace_path: &Path) -> Result<()> {
    let file = fs::File::open(trace_path).map_err(|e| {
        Error::Config(format!("cannot read trace {}: {e}", trace_path.display()))
    })?;
    let trace = EpisodeTrace::read_jsonl(BufReader::new(file))?;
    fs::create_dir_all(&config.out)?;
    let sampler = &trace.header.options.sampler;
    let scenario = &trace.header.scenario;
    let mut prev_ego = scenario.ego_init;
    let mut prev_agents: Vec<KinematicState> =
        scenario.agents_init.iter().map(|a| a.state).collect();
    for (idx, tick) in trace.ticks.iter().enumerate() {
        let ego_set = sample_candidates(&prev_ego, sampler)?;
        let chosen: Option<Trajectory> = tick
            .chosen_index
            .and_then(|i| ego_set.candidates().get(i).cloned());
        let mut predictions: Vec<(Trajectory, f64)> = Vec::new();
        for (node, &agent) in tick.included_agents.iter().enumerate() {
            let set = sample_candidates(&prev_agents[agent], sampler)?;
            for (l, &p) in tick.marginals[node].iter().enumerate() {
                if p > 0.1 {
                    predictions.push((set.get(l)?.clone(), p));
                }
            }
        }
        let svg = render_frame(scenario, &prev_ego, &prev_agents, chosen.as_ref(), &predictions);
        fs::write(config.out.join(format!("frame_{idx:04}.svg")), svg)?;
        prev_ego = tick.ego;
        prev_agents.clone_from(&tick.agents);
    }
    println!(
        "wrote {} frames to {}",
        trace.ticks.len(),
        config.out.display()
    );
    Ok(())
}

fn polyline_points(states: &[KinematicState]) -> String {
    states
        .iter()
        .map(|s| format!("{:.2},{:.2}", s.x, s.y))
        .collect::<Vec<_>>()
        .join(" ")
}

fn box_polygon(state: &KinematicState, length: f64, width: f64, fill: &str) -> String {
    let bbox = crate::trajectory::BoundingBox::new(length, width).expect("valid box");
    let rect = crate::energy::footprint(state, &bbox);
    let points = rect
        .corners()
        .iter()
        .map(|p| format!("{:.2},{:.2}", p.x, p.y))
        .collect::<Vec<_>>()
        .join(" ");
    format!(r#"<polygon points="{points}" fill="{fill}" stroke="black" stroke-width="0.1"/>"#)
}

/// One bird's-eye-view frame: lanes, route, goal, vehicle boxes, the chosen
/// ego trajectory, and every agent prediction above the probability cutoff.
fn render_frame(
    scenario: &Scenario,
    ego: &KinematicState,
    agents: &[KinematicState],
    chosen: Option<&Trajectory>,
    predictions: &[(Trajectory, f64)],
) -> String {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for lane in &scenario.lanes {
        for v in lane.centerline.vertices() {
            min_x = min_x.min(v.x);
            max_x = max_x.max(v.x);
            min_y = min_y.min(v.y - lane.width);
            max_y = max_y.max(v.y + lane.width);
        }
    }
    let pad = 5.0;
    let (w, h) = (max_x - min_x + 2.0 * pad, max_y - min_y + 2.0 * pad);
    let mut svg = format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.1} {:.1} {:.1} {:.1}" "#,
            r#"width="{:.0}" height="{:.0}" data-schema-version="{}">"#,
            "\n",
            // flip the y axis so +y points up as in world coordinates
            r#"<g transform="scale(1,-1)">"#,
            "\n"
        ),
        min_x - pad,
        -(max_y + pad),
        w,
        h,
        w * 6.0,
        h * 6.0,
        OUTPUT_SCHEMA_VERSION,
    );
    for lane in &scenario.lanes {
        let points = lane
            .centerline
            .vertices()
            .iter()
            .map(|p| format!("{:.2},{:.2}", p.x, p.y))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            svg,
            r##"<polyline points="{points}" fill="none" stroke="#d8d8d8" stroke-width="{:.1}" stroke-linecap="butt"/>"##,
            lane.width
        )
        .expect("string write");
        writeln!(
            svg,
            r##"<polyline points="{points}" fill="none" stroke="#ffffff" stroke-width="0.2" stroke-dasharray="2,2"/>"##
        )
        .expect("string write");
    }
    writeln!(
        svg,
        r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="green" stroke-width="0.3"/>"#,
        scenario.goal.point.x, scenario.goal.point.y, scenario.goal.radius
    )
    .expect("string write");
    for (traj, p) in predictions {
        writeln!(
            svg,
            r#"<polyline class="prediction" points="{}" fill="none" stroke="orange" stroke-width="0.3" opacity="{:.2}"/>"#,
            polyline_points(traj.states()),
            p.max(0.25)
        )
        .expect("string write");
    }
    if let Some(traj) = chosen {
        writeln!(
            svg,
            r#"<polyline class="chosen" points="{}" fill="none" stroke="blue" stroke-width="0.4"/>"#,
            polyline_points(traj.states())
        )
        .expect("string write");
    }
    writeln!(
        svg,
        "{}",
        box_polygon(ego, scenario.ego_bbox.length, scenario.ego_bbox.width, "#3060ff")
    )
    .expect("string write");
    for (state, init) in agents.iter().zip(&scenario.agents_init) {
        writeln!(
            svg,
            "{}",
            box_polygon(state, init.bbox.length, init.bbox.width, "#e05050")
        )
        .expect("string write");
    }
    svg.push_str("</g>\n</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_defaults() {
        let config: RunConfig = toml::from_str("").unwrap();
        config.validate().unwrap();
        assert_eq!(config.scenario, "dense_merge");
        assert_eq!(config.effective_seeds(), vec![0]);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seeds, config.seeds);
        assert_eq!(back.sim, config.sim);
    }

    #[test]
    fn seeds_extend_consecutively() {
        let config = RunConfig {
            seeds: vec![7, 9],
            episodes: 4,
            ..Default::default()
        };
        assert_eq!(config.effective_seeds(), vec![7, 9, 10, 11]);
    }

    #[test]
    fn seeds_truncate_to_episode_count() {
        let config = RunConfig {
            seeds: vec![3, 4, 5],
            episodes: 1,
            ..Default::default()
        };
        assert_eq!(config.effective_seeds(), vec![3]);
    }

    #[test]
    fn bad_scenario_name_is_a_config_error() {
        let config = RunConfig {
            scenario: "mystery".into(),
            ..Default::default()
        };
        let err = config.validate().unwrap_err();
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn mode_parses_from_snake_case_config() {
        let config: RunConfig = toml::from_str(r#"mode = "non_interactive""#).unwrap();
        assert_eq!(config.mode, Some(ModeArg::NonInteractive));
        assert_eq!(
            config.mode.unwrap().plan_modes(),
            vec![PlanMode::NonInteractive]
        );
    }

    #[test]
    fn fixture_to_mrf_and_back() {
        let fixture = MrfFixture {
            schema_version: OUTPUT_SCHEMA_VERSION,
            log_unary: vec![vec![0.0, 1.0], vec![0.5, -0.5]],
            log_pairwise: vec![EdgeTable {
                i: 0,
                j: 1,
                table: vec![vec![0.0, 0.2], vec![0.2, 0.0]],
            }],
        };
        let mrf = fixture.to_mrf().unwrap();
        assert_eq!(mrf.n_nodes(), 2);
        assert_eq!(mrf.n_states(), 2);
    }

    #[test]
    fn frame_counts_prediction_polylines() {
        let scenario = empty_road_scenario(0);
        let ego = scenario.ego_init;
        let profile = crate::trajectory::SamplerProfile::default();
        let set = sample_candidates(&ego, &profile).unwrap();
        let preds = vec![
            (set.candidates()[0].clone(), 0.6),
            (set.candidates()[1].clone(), 0.4),
        ];
        let svg = render_frame(&scenario, &ego, &[], Some(&set.candidates()[2]), &preds);
        assert_eq!(svg.matches("class=\"prediction\"").count(), 2);
        assert_eq!(svg.matches("class=\"chosen\"").count(), 1);
    }
}
