//! Loss functions and gradient-based fitting of energy weights.
//!
//! Detection losses operate on plain prediction batches. The prediction and
//! planning loss is a masked cross entropy between target assignments and
//! model marginals: candidates near the ground truth (other than the nearest
//! one) are excluded and the remaining probabilities renormalized, so the
//! model is not punished for spreading mass over near-duplicates. Its
//! gradient is computed analytically through the marginals via clamped
//! inference, which makes it consistent with the loss for any inference
//! backend that is itself exact on the graph at hand.
//!
//! Distillation losses transfer a privileged teacher's outputs to a student,
//! gated so the student is never pushed once it matches the teacher.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::energy::{
    build_energy_tables, candidate_features, EnergyWeights, PlanningContext,
};
use crate::error::{Error, Result};
use crate::inference::{
    enumerate_exact, joint_mrf_from_tables, lbp_marginals, ConditionalMarginals, LbpOptions,
    PairwiseMRF,
};
use crate::trajectory::{near_set, nearest_candidate, trajectory_distance, CandidateSet, Trajectory};

/// Number of regression states per detection: 2 position offsets, width,
/// height, sin/cos of orientation, 2 velocities.
pub const REG_STATES: usize = 8;

/// A batch of detection outputs with targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBatch {
    /// Per-row target class distributions.
    pub class_target: Vec<Vec<f64>>,
    /// Per-row predicted class distributions.
    pub class_pred: Vec<Vec<f64>>,
    /// Per-row regression targets.
    pub reg_target: Vec<[f64; REG_STATES]>,
    /// Per-row regression predictions.
    pub reg_pred: Vec<[f64; REG_STATES]>,
}

fn check_probability_rows(rows: &[Vec<f64>], what: &str) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::Shape(format!("{what} row {i} is empty")));
        }
        if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
            return Err(Error::Config(format!("{what} row {i} has out-of-range entries")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("{what} row {i} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Cross entropy between aligned rows of distributions, with 0 log 0 = 0.
fn cross_entropy_rows(target: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} target rows vs {} prediction rows",
            target.len(),
            pred.len()
        )));
    }
    check_probability_rows(target, "class target")?;
    check_probability_rows(pred, "class prediction")?;
    let mut total = 0.0;
    for (t, p) in target.iter().zip(pred) {
        if t.len() != p.len() {
            return Err(Error::Shape("class row width mismatch".into()));
        }
        for (&ti, &pi) in t.iter().zip(p) {
            if ti > 0.0 {
                total -= ti * pi.ln();
            }
        }
    }
    Ok(total)
}

/// Classification loss: cross entropy summed over rows.
pub fn detection_class_loss(batch: &DetectionBatch) -> Result<f64> {
    cross_entropy_rows(&batch.class_target, &batch.class_pred)
}

/// Smooth L1 with the standard threshold of 1.
fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

/// Regression loss: smooth L1 summed over the 8 states and rows.
pub fn detection_reg_loss(batch: &DetectionBatch) -> Result<f64> {
    if batch.reg_target.len() != batch.reg_pred.len() {
        return Err(Error::Shape(format!(
            "{} regression targets vs {} predictions",
            batch.reg_target.len(),
            batch.reg_pred.len()
        )));
    }
    Ok(batch
        .reg_target
        .iter()
        .zip(&batch.reg_pred)
        .map(|(t, p)| t.iter().zip(p).map(|(a, b)| smooth_l1(a - b)).sum::<f64>())
        .sum())
}

/// Ground-truth assignment targets for the prediction and planning loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTargets {
    /// Nearest-candidate index per node.
    pub nearest: Vec<usize>,
    /// Near-duplicate index sets per node; members other than `nearest`
    /// are masked out of the loss.
    pub near_sets: Vec<BTreeSet<usize>>,
    /// Per-node target rows (one-hot at `nearest`, or soft during
    /// distillation).
    pub target_unary: Vec<Vec<f64>>,
    /// Per-edge target tables.
    pub target_pairwise: BTreeMap<(usize, usize), Vec<Vec<f64>>>,
}

impl TrajectoryTargets {
    /// Build one-hot targets from ground-truth trajectories, one per node,
    /// with pairwise tables on the given edges.
    pub fn from_ground_truth(
        sets: &[CandidateSet],
        gt: &[Trajectory],
        epsilon: f64,
        edges: &BTreeSet<(usize, usize)>,
    ) -> Result<Self> {
        if sets.len() != gt.len() {
            return Err(Error::Shape(format!(
                "{} candidate sets vs {} ground-truth trajectories",
                sets.len(),
                gt.len()
            )));
        }
        let n = sets.len();
        let mut nearest = Vec::with_capacity(n);
        let mut near_sets = Vec::with_capacity(n);
        let mut target_unary = Vec::with_capacity(n);
        for (set, g) in sets.iter().zip(gt) {
            let t = nearest_candidate(g, set)?;
            nearest.push(t);
            near_sets.push(near_set(g, set, epsilon)?);
            let mut row = vec![0.0; set.k()];
            row[t] = 1.0;
            target_unary.push(row);
        }
        let mut target_pairwise = BTreeMap::new();
        for &(i, j) in edges {
            if i >= j || j >= n {
                return Err(Error::IndexOutOfRange(format!("edge ({i}, {j})")));
            }
            let k_i = sets[i].k();
            let k_j = sets[j].k();
            let mut table = vec![vec![0.0; k_j]; k_i];
            table[nearest[i]][nearest[j]] = 1.0;
            target_pairwise.insert((i, j), table);
        }
        Ok(Self {
            nearest,
            near_sets,
            target_unary,
            target_pairwise,
        })
    }

    /// States of node `i` kept in the loss: everything except near-duplicates
    /// of the ground truth other than the nearest candidate itself.
    fn allowed(&self, i: usize, k: usize) -> Vec<usize> {
        (0..k)
            .filter(|s| *s == self.nearest[i] || !self.near_sets[i].contains(s))
            .collect()
    }
}

/// Renormalize `row` over `allowed`; errors if no mass remains.
fn renormalize(row: &[f64], allowed: &[usize], what: &str) -> Result<Vec<f64>> {
    let mass: f64 = allowed.iter().map(|&s| row[s]).sum();
    if !(mass > 0.0) {
        return Err(Error::Numeric(format!("{what}: no probability mass on the unmasked set")));
    }
    Ok(allowed.iter().map(|&s| row[s] / mass).collect())
}

fn node_loss(
    marginal_row: &[f64],
    target_row: &[f64],
    allowed: &[usize],
    nearest: usize,
    near: &BTreeSet<usize>,
) -> Result<f64> {
    // a one-hot target must sit at the nearest candidate if it is inside
    // the near-duplicate set, otherwise the mask would swallow it
    let hot = target_row
        .iter()
        .position(|&p| p == 1.0)
        .filter(|_| target_row.iter().filter(|&&p| p > 0.0).count() == 1);
    if let Some(h) = hot {
        if near.contains(&h) && h != nearest {
            return Err(Error::Config(format!(
                "target candidate {h} is masked as a near-duplicate of {nearest}"
            )));
        }
    }
    let q = renormalize(marginal_row, allowed, "model marginal")?;
    let s = renormalize(target_row, allowed, "target row")?;
    let mut loss = 0.0;
    for (&qi, &si) in q.iter().zip(&s) {
        if si > 0.0 {
            loss -= si * qi.ln();
        }
    }
    Ok(loss)
}

/// Eq.-style masked cross entropy between targets and model marginals:
/// one term per node plus one per edge carried by the marginals, each
/// renormalized over the unmasked candidate set.
pub fn prediction_planning_loss(
    marginals: &ConditionalMarginals,
    targets: &TrajectoryTargets,
) -> Result<f64> {
    let n = targets.target_unary.len();
    if marginals.unary.len() != n {
        return Err(Error::Shape(format!(
            "marginals cover {} nodes, targets cover {n}",
            marginals.unary.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let k = marginals.unary[i].len();
        if targets.target_unary[i].len() != k {
            return Err(Error::Shape(format!("node {i} target row width mismatch")));
        }
        let allowed = targets.allowed(i, k);
        total += node_loss(
            &marginals.unary[i],
            &targets.target_unary[i],
            &allowed,
            targets.nearest[i],
            &targets.near_sets[i],
        )?;
    }
    for (&(i, j), target_table) in &targets.target_pairwise {
        let Some(model_table) = marginals.pairwise.get(&(i, j)) else {
            continue; // edge absent from the model graph carries no loss
        };
        let k_i = marginals.unary[i].len();
        let k_j = marginals.unary[j].len();
        let allowed_i = targets.allowed(i, k_i);
        let allowed_j = targets.allowed(j, k_j);
        // flatten the joint tables over the product of unmasked sets
        let mut model_row = Vec::with_capacity(allowed_i.len() * allowed_j.len());
        let mut target_row = Vec::with_capacity(model_row.capacity());
        for &a in &allowed_i {
            for &b in &allowed_j {
                model_row.push(model_table[a][b]);
                target_row.push(target_table[a][b]);
            }
        }
        let idx: Vec<usize> = (0..model_row.len()).collect();
        let q = renormalize(&model_row, &idx, "model pairwise marginal")?;
        let s = renormalize(&target_row, &idx, "pairwise target")?;
        for (&qi, &si) in q.iter().zip(&s) {
            if si > 0.0 {
                total -= si * qi.ln();
            }
        }
    }
    Ok(total)
}

/// Which marginal computation backs losses and gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InferenceBackend {
    /// Exhaustive enumeration; exact on any graph, exponential in N.
    Exact,
    /// Loopy belief propagation; exact on trees at tight tolerances.
    Lbp(LbpOptions),
}

impl InferenceBackend {
    pub fn infer(&self, mrf: &PairwiseMRF) -> Result<ConditionalMarginals> {
        match self {
            InferenceBackend::Exact => enumerate_exact(mrf),
            InferenceBackend::Lbp(opts) => lbp_marginals(mrf, opts),
        }
    }
}

/// Marginals of every node given clamps `x_node = state`, expanded back to
/// the full node indexing (clamped nodes get one-hot rows).
fn clamped_marginals(
    mrf: &PairwiseMRF,
    clamps: &[(usize, usize)],
    backend: &InferenceBackend,
) -> Result<Vec<Vec<f64>>> {
    let n = mrf.n_nodes();
    let k = mrf.n_states();
    // condition highest node first so earlier indices stay valid
    let mut order: Vec<(usize, usize)> = clamps.to_vec();
    order.sort_by(|a, b| b.0.cmp(&a.0));
    let mut reduced = mrf.clone();
    for &(node, state) in &order {
        reduced = reduced.condition(node, state)?;
    }
    let clamped: BTreeSet<usize> = clamps.iter().map(|&(n, _)| n).collect();
    if clamped.len() != clamps.len() {
        return Err(Error::Config("duplicate clamp node".into()));
    }
    let inner = if reduced.n_nodes() == 0 {
        Vec::new()
    } else {
        backend.infer(&reduced)?.unary
    };
    let mut out = vec![vec![0.0; k]; n];
    let mut next = 0usize;
    for (node, row) in out.iter_mut().enumerate() {
        if let Some(&(_, state)) = clamps.iter().find(|&&(c, _)| c == node) {
            row[state] = 1.0;
        } else {
            row.copy_from_slice(&inner[next]);
            next += 1;
        }
    }
    Ok(out)
}

/// Loss and its gradient with respect to the log-unary potentials.
///
/// Uses the identity d log p_i(l) / d theta_m(k) = p(x_m = k | x_i = l)
/// - p_m(k); the unconditional parts cancel inside each renormalized term,
/// leaving sums of clamped marginals weighted by (model - target)
/// residuals. Exact whenever `backend` is exact on the graph.
pub fn loss_and_potential_gradient(
    mrf: &PairwiseMRF,
    targets: &TrajectoryTargets,
    backend: &InferenceBackend,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = mrf.n_nodes();
    let k = mrf.n_states();
    let marginals = backend.infer(mrf)?;
    let loss = prediction_planning_loss(&marginals, targets)?;

    let mut grad = vec![vec![0.0; k]; n];
    // unary terms
    for i in 0..n {
        let allowed = targets.allowed(i, k);
        let q = renormalize(&marginals.unary[i], &allowed, "model marginal")?;
        let s = renormalize(&targets.target_unary[i], &allowed, "target row")?;
        for ((&l, &qi), &si) in allowed.iter().zip(&q).zip(&s) {
            let r = qi - si;
            if r.abs() < 1e-15 {
                continue;
            }
            let cond = clamped_marginals(mrf, &[(i, l)], backend)?;
            for (g, c) in grad.iter_mut().zip(&cond) {
                for (gv, cv) in g.iter_mut().zip(c) {
                    *gv += r * cv;
                }
            }
        }
    }
    // pairwise terms over edges present in both the graph and the targets
    for (&(i, j), target_table) in &targets.target_pairwise {
        let Some(model_table) = marginals.pairwise.get(&(i, j)) else {
            continue;
        };
        let allowed_i = targets.allowed(i, k);
        let allowed_j = targets.allowed(j, k);
        let mut pairs = Vec::new();
        let mut model_row = Vec::new();
        let mut target_row = Vec::new();
        for &a in &allowed_i {
            for &b in &allowed_j {
                pairs.push((a, b));
                model_row.push(model_table[a][b]);
                target_row.push(target_table[a][b]);
            }
        }
        let idx: Vec<usize> = (0..pairs.len()).collect();
        let q = renormalize(&model_row, &idx, "model pairwise marginal")?;
        let s = renormalize(&target_row, &idx, "pairwise target")?;
        for ((&(a, b), &qi), &si) in pairs.iter().zip(&q).zip(&s) {
            let r = qi - si;
            if r.abs() < 1e-15 {
                continue;
            }
            let cond = clamped_marginals(mrf, &[(i, a), (j, b)], backend)?;
            for (g, c) in grad.iter_mut().zip(&cond) {
                for (gv, cv) in g.iter_mut().zip(c) {
                    *gv += r * cv;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Chain the potential gradient through theta_m(k) = -phi_{m,k} . w.
///
/// `features[m][k]` is the feature vector of node m's candidate k; every
/// vector must share the weight dimension.
pub fn chain_to_weights(
    potential_grad: &[Vec<f64>],
    features: &[Vec<Vec<f64>>],
    dim: usize,
) -> Result<Vec<f64>> {
    if potential_grad.len() != features.len() {
        return Err(Error::Shape("feature rows do not match gradient rows".into()));
    }
    let mut grad_w = vec![0.0; dim];
    for (g_row, f_row) in potential_grad.iter().zip(features) {
        if g_row.len() != f_row.len() {
            return Err(Error::Shape("feature columns do not match gradient columns".into()));
        }
        for (g, phi) in g_row.iter().zip(f_row) {
            if phi.len() != dim {
                return Err(Error::Shape(format!(
                    "feature vector dim {} vs weight dim {dim}",
                    phi.len()
                )));
            }
            for (gw, p) in grad_w.iter_mut().zip(phi) {
                *gw -= g * p;
            }
        }
    }
    Ok(grad_w)
}

/// One logged scene used for weight fitting: context, candidate sets for
/// ego plus agents, and ground-truth trajectories in the same order.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    pub ctx: PlanningContext,
    pub sets: Vec<CandidateSet>,
    pub gt: Vec<Trajectory>,
}

/// Knobs for [`fit_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub steps: usize,
    pub step_size: f64,
    /// Stop early when the loss improves by less than this.
    pub plateau_tolerance: f64,
    /// Halve the step on a loss increase instead of accepting it.
    pub step_halving: bool,
    /// Near-duplicate radius for the loss masks.
    pub epsilon: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 1e-2,
            plateau_tolerance: 1e-9,
            step_halving: true,
            epsilon: 0.5,
        }
    }
}

/// History of per-step losses from a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub losses: Vec<f64>,
    pub steps_taken: usize,
}

fn scene_loss_and_gradient(
    scene: &TrainingScene,
    weights: &EnergyWeights,
    epsilon: f64,
    backend: &InferenceBackend,
) -> Result<(f64, Vec<f64>)> {
    let tables = build_energy_tables(&scene.ctx, &scene.sets, weights)?;
    let mrf = joint_mrf_from_tables(&tables)?;
    let edges: BTreeSet<(usize, usize)> = mrf.edges().collect();
    let targets = TrajectoryTargets::from_ground_truth(&scene.sets, &scene.gt, epsilon, &edges)?;
    let (loss, pot_grad) = loss_and_potential_gradient(&mrf, &targets, backend)?;
    let features: Vec<Vec<Vec<f64>>> = scene
        .sets
        .iter()
        .enumerate()
        .map(|(col, set)| {
            let agent_index = if col == 0 { None } else { Some(col - 1) };
            set.candidates()
                .iter()
                .map(|t| candidate_features(t, &scene.ctx, agent_index, weights.feature_set))
                .collect()
        })
        .collect();
    let grad_w = chain_to_weights(&pot_grad, &features, weights.w.len())?;
    Ok((loss, grad_w))
}

/// Summed loss and weight gradient over a corpus of scenes.
pub fn corpus_loss_and_gradient(
    scenes: &[TrainingScene],
    weights: &EnergyWeights,
    epsilon: f64,
    backend: &InferenceBackend,
) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; weights.w.len()];
    for (idx, scene) in scenes.iter().enumerate() {
        let (l, g) = scene_loss_and_gradient(scene, weights, epsilon, backend)?;
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss on episode {idx}")));
        }
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// The shared descent loop: plain gradient steps with optional step halving
/// on a loss increase and a plateau stop.
fn gradient_descent<F>(
    objective: F,
    init: &EnergyWeights,
    opts: &OptimizerOptions,
    skip: bool,
) -> Result<(EnergyWeights, FitReport)>
where
    F: Fn(&EnergyWeights) -> Result<(f64, Vec<f64>)>,
{
    init.validate()?;
    let mut weights = init.clone();
    let mut report = FitReport {
        losses: Vec::new(),
        steps_taken: 0,
    };
    if opts.steps == 0 || skip {
        return Ok((weights, report));
    }
    let mut step = opts.step_size;
    let (mut loss, mut grad) = objective(&weights)?;
    report.losses.push(loss);
    for _ in 0..opts.steps {
        let mut candidate = weights.clone();
        for (w, g) in candidate.w.iter_mut().zip(&grad) {
            *w -= step * g;
        }
        let (new_loss, new_grad) = objective(&candidate)?;
        if opts.step_halving && new_loss > loss {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
            continue;
        }
        let improved = loss - new_loss;
        weights = candidate;
        loss = new_loss;
        grad = new_grad;
        report.losses.push(loss);
        report.steps_taken += 1;
        if improved.abs() < opts.plateau_tolerance {
            break;
        }
    }
    Ok((weights, report))
}

/// Plain gradient descent on the summed prediction and planning loss.
pub fn fit_weights(
    scenes: &[TrainingScene],
    init: &EnergyWeights,
    opts: &OptimizerOptions,
    backend: &InferenceBackend,
) -> Result<(EnergyWeights, FitReport)> {
    gradient_descent(
        |w| corpus_loss_and_gradient(scenes, w, opts.epsilon, backend),
        init,
        opts,
        scenes.is_empty(),
    )
}

/// Summed prediction and planning loss of `weights` over `scenes`, without
/// gradients; used for held-out evaluation.
pub fn corpus_loss(
    scenes: &[TrainingScene],
    weights: &EnergyWeights,
    epsilon: f64,
    backend: &InferenceBackend,
) -> Result<f64> {
    let mut total = 0.0;
    for scene in scenes {
        let tables = build_energy_tables(&scene.ctx, &scene.sets, weights)?;
        let mrf = joint_mrf_from_tables(&tables)?;
        let edges: BTreeSet<(usize, usize)> = mrf.edges().collect();
        let targets =
            TrajectoryTargets::from_ground_truth(&scene.sets, &scene.gt, epsilon, &edges)?;
        let marginals = backend.infer(&mrf)?;
        total += prediction_planning_loss(&marginals, &targets)?;
    }
    Ok(total)
}

/// Keep only scenes with a finite loss under `weights`: at a coarse K the
/// candidates nearest the ground truth can collide with each other, putting
/// the target assignment at zero model probability and an infinite cross
/// entropy no finite weight change can fix. Returns the kept scenes and the
/// dropped count.
pub fn filter_representable_scenes(
    scenes: Vec<TrainingScene>,
    weights: &EnergyWeights,
    epsilon: f64,
    backend: &InferenceBackend,
) -> Result<(Vec<TrainingScene>, usize)> {
    let mut kept = Vec::with_capacity(scenes.len());
    let mut dropped = 0;
    for scene in scenes {
        let loss = corpus_loss(std::slice::from_ref(&scene), weights, epsilon, backend)?;
        if loss.is_finite() {
            kept.push(scene);
        } else {
            dropped += 1;
        }
    }
    Ok((kept, dropped))
}

/// Soft targets built from another model's marginals: every state is kept
/// in the loss and the target rows/tables are the marginals themselves.
fn soft_targets(
    marginals: &ConditionalMarginals,
    edges: &BTreeSet<(usize, usize)>,
) -> TrajectoryTargets {
    let nearest = marginals
        .unary
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect();
    let target_pairwise = marginals
        .pairwise
        .iter()
        .filter(|(e, _)| edges.contains(e))
        .map(|(e, t)| (*e, t.clone()))
        .collect();
    TrajectoryTargets {
        nearest,
        near_sets: vec![BTreeSet::new(); marginals.unary.len()],
        target_unary: marginals.unary.clone(),
        target_pairwise,
    }
}

/// Summed trajectory distance to ground truth of the per-node most-probable
/// candidates; the quantity compared by the plan-distillation gate.
fn map_distance_to_gt(
    marginals: &ConditionalMarginals,
    sets: &[CandidateSet],
    gt: &[Trajectory],
) -> Result<f64> {
    let mut total = 0.0;
    for ((row, set), g) in marginals.unary.iter().zip(sets).zip(gt) {
        let sel = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        total += trajectory_distance(g, set.get(sel)?)?;
    }
    Ok(total)
}

/// Student objective on one scene: the ground-truth prediction/planning loss
/// plus, when this scene's plan-distillation gate is open, `lambda_dp` times
/// the same loss form against the teacher's marginals as soft targets.
fn scene_distilled_loss_and_gradient(
    scene: &TrainingScene,
    student: &EnergyWeights,
    teacher_marginals: Option<&ConditionalMarginals>,
    lambda_dp: f64,
    epsilon: f64,
    backend: &InferenceBackend,
) -> Result<(f64, Vec<f64>)> {
    let tables = build_energy_tables(&scene.ctx, &scene.sets, student)?;
    let mrf = joint_mrf_from_tables(&tables)?;
    let edges: BTreeSet<(usize, usize)> = mrf.edges().collect();
    let targets = TrajectoryTargets::from_ground_truth(&scene.sets, &scene.gt, epsilon, &edges)?;
    let (mut loss, mut pot_grad) = loss_and_potential_gradient(&mrf, &targets, backend)?;

    if let Some(teacher_marginals) = teacher_marginals {
        let soft = soft_targets(teacher_marginals, &edges);
        let (dl, dg) = loss_and_potential_gradient(&mrf, &soft, backend)?;
        loss += lambda_dp * dl;
        for (row, drow) in pot_grad.iter_mut().zip(&dg) {
            for (g, d) in row.iter_mut().zip(drow) {
                *g += lambda_dp * d;
            }
        }
    }

    let features: Vec<Vec<Vec<f64>>> = scene
        .sets
        .iter()
        .enumerate()
        .map(|(col, set)| {
            let agent_index = if col == 0 { None } else { Some(col - 1) };
            set.candidates()
                .iter()
                .map(|t| candidate_features(t, &scene.ctx, agent_index, student.feature_set))
                .collect()
        })
        .collect();
    let grad_w = chain_to_weights(&pot_grad, &features, student.w.len())?;
    Ok((loss, grad_w))
}

/// Gradient descent on the student objective with gated plan distillation
/// against a fixed teacher. With `lambda_dp == 0` this is exactly
/// [`fit_weights`].
///
/// The Eq.-style gate is evaluated once per scene with the initial student
/// and then frozen: a gate that flips while descending makes the objective
/// discontinuous and strands the step-halving line search, so the scenes
/// needing distillation are decided up front.
pub fn fit_distilled_weights(
    scenes: &[TrainingScene],
    init: &EnergyWeights,
    teacher: &EnergyWeights,
    lambda_dp: f64,
    opts: &OptimizerOptions,
    backend: &InferenceBackend,
) -> Result<(EnergyWeights, FitReport)> {
    if !(lambda_dp >= 0.0) {
        return Err(Error::Config("distillation weight must be >= 0".into()));
    }
    teacher.validate()?;
    init.validate()?;
    // Per-scene teacher marginals, kept only where the gate is open for the
    // initial student (its most-probable candidates sit farther from ground
    // truth than the teacher's).
    let mut teacher_targets: Vec<Option<ConditionalMarginals>> = Vec::with_capacity(scenes.len());
    for scene in scenes {
        if lambda_dp == 0.0 {
            teacher_targets.push(None);
            continue;
        }
        let teacher_tables = build_energy_tables(&scene.ctx, &scene.sets, teacher)?;
        let teacher_marginals = backend.infer(&joint_mrf_from_tables(&teacher_tables)?)?;
        let student_tables = build_energy_tables(&scene.ctx, &scene.sets, init)?;
        let student_marginals = backend.infer(&joint_mrf_from_tables(&student_tables)?)?;
        let gate_open = map_distance_to_gt(&student_marginals, &scene.sets, &scene.gt)?
            > map_distance_to_gt(&teacher_marginals, &scene.sets, &scene.gt)?;
        teacher_targets.push(gate_open.then_some(teacher_marginals));
    }
    gradient_descent(
        |w| {
            let mut total = 0.0;
            let mut grad = vec![0.0; w.w.len()];
            for (idx, (scene, soft)) in scenes.iter().zip(&teacher_targets).enumerate() {
                let (l, g) = scene_distilled_loss_and_gradient(
                    scene,
                    w,
                    soft.as_ref(),
                    lambda_dp,
                    opts.epsilon,
                    backend,
                )?;
                if !l.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss on episode {idx}")));
                }
                total += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            Ok((total, grad))
        },
        init,
        opts,
        scenes.is_empty(),
    )
}

/// Teacher-to-student classification distillation: cross entropy with the
/// teacher's distribution as the target.
pub fn distill_class_loss(teacher_pred: &[Vec<f64>], student_pred: &[Vec<f64>]) -> Result<f64> {
    cross_entropy_rows(teacher_pred, student_pred)
}

/// Gated regression distillation: per state, smooth L1 between teacher and
/// student, counted only where the student's L1 error to ground truth
/// strictly exceeds the teacher's.
pub fn distill_reg_loss(
    gt: &[[f64; REG_STATES]],
    teacher_pred: &[[f64; REG_STATES]],
    student_pred: &[[f64; REG_STATES]],
) -> Result<f64> {
    if gt.len() != teacher_pred.len() || gt.len() != student_pred.len() {
        return Err(Error::Shape("regression batch length mismatch".into()));
    }
    let mut total = 0.0;
    for ((g, t), s) in gt.iter().zip(teacher_pred).zip(student_pred) {
        for k in 0..REG_STATES {
            if (g[k] - s[k]).abs() > (g[k] - t[k]).abs() {
                total += smooth_l1(t[k] - s[k]);
            }
        }
    }
    Ok(total)
}

/// One model's prediction/planning output for a scene: selected trajectory
/// per node plus the marginal tables behind them.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub selected: Vec<Trajectory>,
    pub marginals: ConditionalMarginals,
}

/// Gated plan distillation: when the student's summed trajectory distance to
/// ground truth exceeds the teacher's, the masked cross entropy between the
/// teacher's marginals (soft targets) and the student's is returned; 0
/// otherwise.
pub fn distill_plan_loss(
    gt: &[Trajectory],
    sets: &[CandidateSet],
    epsilon: f64,
    teacher: &ModelOutput,
    student: &ModelOutput,
) -> Result<f64> {
    if teacher.selected.len() != gt.len() || student.selected.len() != gt.len() {
        return Err(Error::Shape("selected trajectory count mismatch".into()));
    }
    let summed = |out: &ModelOutput| -> Result<f64> {
        gt.iter()
            .zip(&out.selected)
            .map(|(g, s)| trajectory_distance(g, s))
            .sum()
    };
    if summed(student)? <= summed(teacher)? {
        return Ok(0.0);
    }
    let edges: BTreeSet<(usize, usize)> = teacher.marginals.pairwise.keys().copied().collect();
    let mut targets = TrajectoryTargets::from_ground_truth(sets, gt, epsilon, &edges)?;
    targets.target_unary = teacher.marginals.unary.clone();
    targets.target_pairwise = teacher.marginals.pairwise.clone();
    prediction_planning_loss(&student.marginals, &targets)
}

/// Flat feature embedding used by the feature-mimicry loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEmbedding {
    pub values: Vec<f64>,
}

impl FeatureEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature embedding".into()));
        }
        Ok(Self { values })
    }
}

/// Feature mimicry: elementwise L1 distance between embeddings.
pub fn distill_feature_loss(teacher: &FeatureEmbedding, student: &FeatureEmbedding) -> Result<f64> {
    if teacher.values.len() != student.values.len() {
        return Err(Error::Shape(format!(
            "embedding dims {} vs {}",
            teacher.values.len(),
            student.values.len()
        )));
    }
    Ok(teacher
        .values
        .iter()
        .zip(&student.values)
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Mixing coefficients for the composite training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_o: f64,
    pub lambda_p: f64,
    pub lambda_d: f64,
    pub lambda_do: f64,
    pub lambda_dp: f64,
    pub lambda_df: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_o: 1.0,
            lambda_p: 1.0,
            lambda_d: 1.0,
            lambda_do: 1.0,
            lambda_dp: 1.0,
            lambda_df: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_o,
            self.lambda_p,
            self.lambda_d,
            self.lambda_do,
            self.lambda_dp,
            self.lambda_df,
        ];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Teacher objective: weighted detection plus prediction/planning losses.
pub fn teacher_loss(weights: &LossWeights, detection: f64, plan: f64) -> Result<f64> {
    weights.validate()?;
    Ok(weights.lambda_o * detection + weights.lambda_p * plan)
}

/// Student objective: teacher-style terms plus the weighted distillation
/// bundle.
pub fn student_loss(
    weights: &LossWeights,
    detection: f64,
    plan: f64,
    distill_class: f64,
    distill_plan: f64,
    distill_feature: f64,
) -> Result<f64> {
    weights.validate()?;
    let distill = weights.lambda_do * distill_class
        + weights.lambda_dp * distill_plan
        + weights.lambda_df * distill_feature;
    Ok(weights.lambda_o * detection + weights.lambda_p * plan + weights.lambda_d * distill)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_hot(k: usize, hot: usize) -> Vec<f64> {
        let mut row = vec![0.0; k];
        row[hot] = 1.0;
        row
    }

    #[test]
    fn detection_losses_trivial_cases() {
        let batch = DetectionBatch {
            class_target: vec![one_hot(3, 1)],
            class_pred: vec![one_hot(3, 1)],
            reg_target: vec![[0.5; REG_STATES]],
            reg_pred: vec![[0.5; REG_STATES]],
        };
        assert_relative_eq!(detection_class_loss(&batch).unwrap(), 0.0);
        assert_relative_eq!(detection_reg_loss(&batch).unwrap(), 0.0);

        let batch = DetectionBatch {
            class_target: vec![vec![1.0, 0.0]],
            class_pred: vec![vec![0.5, 0.5]],
            reg_target: vec![],
            reg_pred: vec![],
        };
        assert_relative_eq!(
            detection_class_loss(&batch).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn detection_losses_reject_bad_rows() {
        let batch = DetectionBatch {
            class_target: vec![vec![0.7, 0.7]],
            class_pred: vec![vec![0.5, 0.5]],
            reg_target: vec![],
            reg_pred: vec![],
        };
        assert!(detection_class_loss(&batch).is_err());
    }

    #[test]
    fn smooth_l1_reg_hand_case() {
        let mut t = [0.0; REG_STATES];
        t[0] = 2.0; // |x| >= 1: loss = |x| - 0.5
        t[1] = 0.4; // |x| < 1: loss = 0.5 x^2
        let batch = DetectionBatch {
            class_target: vec![],
            class_pred: vec![],
            reg_target: vec![t],
            reg_pred: vec![[0.0; REG_STATES]],
        };
        assert_relative_eq!(detection_reg_loss(&batch).unwrap(), 1.5 + 0.08, epsilon = 1e-12);
    }

    fn targets_for(nearest: Vec<usize>, near_sets: Vec<BTreeSet<usize>>, k: usize) -> TrajectoryTargets {
        let target_unary = nearest.iter().map(|&t| one_hot(k, t)).collect();
        TrajectoryTargets {
            nearest,
            near_sets,
            target_unary,
            target_pairwise: BTreeMap::new(),
        }
    }

    fn marginals_for(unary: Vec<Vec<f64>>) -> ConditionalMarginals {
        ConditionalMarginals {
            unary,
            pairwise: BTreeMap::new(),
            converged: true,
            iterations: 0,
            log_partition: None,
        }
    }

    #[test]
    fn plan_loss_one_hot_marginal_is_zero() {
        let targets = targets_for(vec![2], vec![BTreeSet::new()], 4);
        let marginals = marginals_for(vec![one_hot(4, 2)]);
        assert_relative_eq!(prediction_planning_loss(&marginals, &targets).unwrap(), 0.0);
    }

    #[test]
    fn plan_loss_uniform_marginal_empty_mask() {
        let targets = targets_for(vec![1, 3], vec![BTreeSet::new(), BTreeSet::new()], 4);
        let marginals = marginals_for(vec![vec![0.25; 4], vec![0.25; 4]]);
        assert_relative_eq!(
            prediction_planning_loss(&marginals, &targets).unwrap(),
            2.0 * 4.0_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn plan_loss_masked_duplicate_renormalizes() {
        // K = 3, candidate 1 is a near-duplicate of the target 0 and gets
        // masked: loss = -log(p0 / (1 - p1))
        let near: BTreeSet<usize> = [0, 1].into_iter().collect();
        let targets = targets_for(vec![0], vec![near], 3);
        let row = vec![0.2, 0.5, 0.3];
        let marginals = marginals_for(vec![row.clone()]);
        let expect = -(row[0] / (1.0 - row[1])).ln();
        assert_relative_eq!(
            prediction_planning_loss(&marginals, &targets).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn plan_loss_rejects_masked_target() {
        // one-hot target at 1, but 1 is masked as a duplicate of nearest 0
        let near: BTreeSet<usize> = [0, 1].into_iter().collect();
        let mut targets = targets_for(vec![0], vec![near], 3);
        targets.target_unary = vec![one_hot(3, 1)];
        let marginals = marginals_for(vec![vec![0.2, 0.5, 0.3]]);
        assert!(prediction_planning_loss(&marginals, &targets).is_err());
    }

    /// Random MRF whose unary potentials are -phi . w; returns
    /// (pairwise tables, features).
    fn random_fixture(
        rng: &mut ChaCha8Rng,
        n: usize,
        k: usize,
        dim: usize,
        edges: &[(usize, usize)],
    ) -> (BTreeMap<(usize, usize), Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
        let features: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| {
                (0..k)
                    .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let mut pairwise = BTreeMap::new();
        for &(i, j) in edges {
            let table: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            pairwise.insert((i, j), table);
        }
        (pairwise, features)
    }

    fn mrf_from_weights(
        w: &[f64],
        features: &[Vec<Vec<f64>>],
        pairwise: &BTreeMap<(usize, usize), Vec<Vec<f64>>>,
    ) -> PairwiseMRF {
        let unary: Vec<Vec<f64>> = features
            .iter()
            .map(|node| {
                node.iter()
                    .map(|phi| -phi.iter().zip(w).map(|(p, w)| p * w).sum::<f64>())
                    .collect()
            })
            .collect();
        PairwiseMRF::new(unary, pairwise.clone()).unwrap()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let dim = 4;
        let backend = InferenceBackend::Exact;
        let cases: &[(usize, usize, &[(usize, usize)])] = &[
            (2, 3, &[(0, 1)]),
            (3, 3, &[(0, 1), (1, 2), (0, 2)]), // loop; exact backend keeps it consistent
            (3, 2, &[(0, 2)]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, k, edges) in cases {
            let (pairwise, features) = random_fixture(&mut rng, n, k, dim, edges);
            let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mut near_sets = vec![BTreeSet::new(); n];
            near_sets[0].insert(1); // exercise the masking path
            let nearest: Vec<usize> = (0..n).map(|i| i % k).collect();
            let mut targets = targets_for(nearest.clone(), near_sets, k);
            for &(i, j) in edges {
                let mut table = vec![vec![0.0; k]; k];
                table[nearest[i]][nearest[j]] = 1.0;
                targets.target_pairwise.insert((i, j), table);
            }

            let mrf = mrf_from_weights(&w, &features, &pairwise);
            let (_, pot_grad) = loss_and_potential_gradient(&mrf, &targets, &backend).unwrap();
            let grad = chain_to_weights(&pot_grad, &features, dim).unwrap();

            let h = 1e-5;
            for c in 0..dim {
                let mut wp = w.clone();
                wp[c] += h;
                let mut wm = w.clone();
                wm[c] -= h;
                let lp = prediction_planning_loss(
                    &backend.infer(&mrf_from_weights(&wp, &features, &pairwise)).unwrap(),
                    &targets,
                )
                .unwrap();
                let lm = prediction_planning_loss(
                    &backend.infer(&mrf_from_weights(&wm, &features, &pairwise)).unwrap(),
                    &targets,
                )
                .unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let scale = fd.abs().max(grad[c].abs()).max(1e-8);
                assert!(
                    ((grad[c] - fd) / scale).abs() < 1e-4,
                    "n={n} k={k} coord {c}: analytic {} vs fd {fd}",
                    grad[c]
                );
            }
        }
    }

    #[test]
    fn single_softmax_fit_decreases_monotonically() {
        // one node, K = 2, no edges: convex logistic fit
        let dim = 2;
        let features = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let pairwise = BTreeMap::new();
        let targets = targets_for(vec![0], vec![BTreeSet::new()], 2);
        let backend = InferenceBackend::Exact;
        let mut w = vec![0.3, -0.2];
        let mut losses = Vec::new();
        for _ in 0..200 {
            let mrf = mrf_from_weights(&w, &features, &pairwise);
            let (loss, pot_grad) =
                loss_and_potential_gradient(&mrf, &targets, &backend).unwrap();
            losses.push(loss);
            let grad = chain_to_weights(&pot_grad, &features, dim).unwrap();
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= 0.1 * gi;
            }
        }
        assert!(losses.windows(2).all(|p| p[1] <= p[0] + 1e-12));
        assert!(*losses.last().unwrap() < 0.05, "loss {:?}", losses.last());
    }

    #[test]
    fn distill_reg_gate() {
        let gt = [[0.0; REG_STATES]];
        // student matches ground truth: gate never fires
        let teacher = [[1.0; REG_STATES]];
        assert_relative_eq!(distill_reg_loss(&gt, &teacher, &gt).unwrap(), 0.0);
        // student == teacher: smooth L1 of identical values is 0
        assert_relative_eq!(distill_reg_loss(&gt, &teacher, &teacher).unwrap(), 0.0);
        // one state: student error 2.0 vs teacher 0.5, |T - S| = 1.5 -> 1.0
        let mut t = [0.0; REG_STATES];
        t[0] = 0.5;
        let mut s = [0.0; REG_STATES];
        s[0] = 2.0;
        assert_relative_eq!(distill_reg_loss(&gt, &[t], &[s]).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn distill_class_hand_case() {
        let teacher = vec![vec![0.5, 0.5]];
        let student = vec![vec![0.5, 0.5]];
        assert_relative_eq!(
            distill_class_loss(&teacher, &student).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        let t = vec![vec![0.3, 0.7]];
        let s = vec![vec![0.6, 0.4]];
        let hand = -(0.3 * 0.6_f64.ln() + 0.7 * 0.4_f64.ln());
        assert_relative_eq!(distill_class_loss(&t, &s).unwrap(), hand, epsilon = 1e-12);
    }

    #[test]
    fn distill_feature_l1() {
        let t = FeatureEmbedding::new(vec![1.0, 2.0]).unwrap();
        let s = FeatureEmbedding::new(vec![0.0, 0.0]).unwrap();
        assert_relative_eq!(distill_feature_loss(&t, &s).unwrap(), 3.0);
        assert_relative_eq!(distill_feature_loss(&t, &t).unwrap(), 0.0);
        let bad = FeatureEmbedding::new(vec![0.0]).unwrap();
        assert!(distill_feature_loss(&t, &bad).is_err());
    }

    #[test]
    fn composite_losses() {
        let lw = LossWeights::default();
        assert_relative_eq!(teacher_loss(&lw, 2.0, 3.0).unwrap(), 5.0);
        assert_relative_eq!(student_loss(&lw, 2.0, 3.0, 1.0, 0.5, 0.25).unwrap(), 6.75);
        let zero = LossWeights {
            lambda_o: 0.0,
            lambda_p: 0.0,
            lambda_d: 0.0,
            lambda_do: 0.0,
            lambda_dp: 0.0,
            lambda_df: 0.0,
        };
        assert_relative_eq!(student_loss(&zero, 9.0, 9.0, 9.0, 9.0, 9.0).unwrap(), 0.0);
        let neg = LossWeights {
            lambda_o: -1.0,
            ..LossWeights::default()
        };
        assert!(teacher_loss(&neg, 1.0, 1.0).is_err());
    }

    #[test]
    fn fit_weights_zero_steps_returns_init() {
        let init = EnergyWeights::default_base();
        let opts = OptimizerOptions {
            steps: 0,
            ..Default::default()
        };
        let (out, report) = fit_weights(&[], &init, &opts, &InferenceBackend::Exact).unwrap();
        assert_eq!(out.w, init.w);
        assert_eq!(report.steps_taken, 0);
    }
}
