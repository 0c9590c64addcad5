//! Discrete probabilistic core: pairwise MRFs over candidate indices, exact
//! marginals by enumeration, and sum-product loopy belief propagation.
//!
//! All potentials and messages live in log space; the collision term puts
//! four orders of magnitude between good and bad candidates, which makes
//! linear-space message passing underflow immediately.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::energy::{build_energy_tables, EnergyTables, EnergyWeights, PlanningContext};
use crate::error::{Error, Result};
use crate::trajectory::CandidateSet;

/// Numerically stable log(sum(exp(xs))).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A pairwise Markov random field over per-agent candidate choices.
///
/// Node `i` ranges over `n_states` candidates; an absent pair in
/// `log_pairwise` means no edge (identically zero pairwise energy).
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMRF {
    n_states: usize,
    log_unary: Vec<Vec<f64>>,
    log_pairwise: BTreeMap<(usize, usize), Vec<Vec<f64>>>,
}

impl PairwiseMRF {
    pub fn new(log_unary: Vec<Vec<f64>>, log_pairwise: BTreeMap<(usize, usize), Vec<Vec<f64>>>) -> Result<Self> {
        let n_states = log_unary.first().map_or(0, Vec::len);
        for row in &log_unary {
            if row.len() != n_states {
                return Err(Error::Shape("ragged unary potential rows".into()));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric("non-finite unary log-potential".into()));
            }
        }
        for (&(i, j), table) in &log_pairwise {
            if i >= j || j >= log_unary.len() {
                return Err(Error::IndexOutOfRange(format!("edge ({i}, {j})")));
            }
            if table.len() != n_states || table.iter().any(|r| r.len() != n_states) {
                return Err(Error::Shape(format!("edge ({i}, {j}) table is not K x K")));
            }
            if !table.iter().flatten().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite potential on edge ({i}, {j})")));
            }
        }
        Ok(Self {
            n_states,
            log_unary,
            log_pairwise,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.log_unary.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn log_unary(&self) -> &[Vec<f64>] {
        &self.log_unary
    }

    pub fn log_pairwise(&self) -> &BTreeMap<(usize, usize), Vec<Vec<f64>>> {
        &self.log_pairwise
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.log_pairwise.keys().copied()
    }

    /// Condition on `node = state`: fold the node's pairwise slices into its
    /// neighbours' unaries and drop it. Remaining nodes keep their order
    /// (indices above `node` shift down by one).
    pub fn condition(&self, node: usize, state: usize) -> Result<PairwiseMRF> {
        if node >= self.n_nodes() {
            return Err(Error::IndexOutOfRange(format!("node {node}")));
        }
        if state >= self.n_states {
            return Err(Error::IndexOutOfRange(format!("state {state}")));
        }
        let remap = |i: usize| if i > node { i - 1 } else { i };
        let mut unary: Vec<Vec<f64>> = self
            .log_unary
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != node)
            .map(|(_, row)| row.clone())
            .collect();
        let mut pairwise = BTreeMap::new();
        for (&(i, j), table) in &self.log_pairwise {
            if i == node {
                let target = &mut unary[remap(j)];
                for (x, t) in target.iter_mut().zip(&table[state]) {
                    *x += t;
                }
            } else if j == node {
                let target = &mut unary[remap(i)];
                for (xi, t) in target.iter_mut().enumerate() {
                    *t += table[xi][state];
                }
            } else {
                pairwise.insert((remap(i), remap(j)), table.clone());
            }
        }
        PairwiseMRF::new(unary, pairwise)
    }
}

/// Probability tables produced by inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMarginals {
    /// Per-node rows over candidates, each summing to 1.
    pub unary: Vec<Vec<f64>>,
    /// Per-edge K x K tables, each summing to 1.
    pub pairwise: BTreeMap<(usize, usize), Vec<Vec<f64>>>,
    pub converged: bool,
    pub iterations: usize,
    /// Exact log-partition; only the enumeration backend fills this in.
    pub log_partition: Option<f64>,
}

/// Loop schedule knobs for [`lbp_marginals`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbpOptions {
    pub max_iterations: usize,
    pub damping: f64,
    pub tolerance: f64,
}

impl Default for LbpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            damping: 0.5,
            tolerance: 1e-6,
        }
    }
}

impl LbpOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("lbp: max_iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config("lbp: damping must be in [0, 1)".into()));
        }
        if self.tolerance <= 0.0 {
            return Err(Error::Config("lbp: tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// MRF over the N other agents conditioned on one ego candidate:
/// unary = -(E_a + E_s(ego, agent)), pairwise = -E_s(agent, agent).
///
/// Interaction energies are clipped at the tables' cap: the prediction model
/// treats avoiding a conflict as worth at most that much inconvenience, so a
/// conflicted candidate keeps residual probability instead of vanishing.
pub fn conditional_mrf_from_tables(tables: &EnergyTables, ego_index: usize) -> Result<PairwiseMRF> {
    if ego_index >= tables.scores.k() {
        return Err(Error::IndexOutOfRange(format!("ego candidate {ego_index}")));
    }
    let n = tables.ego_agent_safety.len();
    let k = tables.scores.k();
    let mut unary = vec![vec![0.0; k]; n];
    for i in 0..n {
        // The ego is clamped here, so the agent is the only party able to
        // give way: its own cap applies. Candidates that would run through
        // the ego's current footprint cause the collision themselves and
        // stay uncapped.
        let cap = tables.interaction_caps[i + 1];
        for l in 0..k {
            let e = tables.ego_agent_safety[i][ego_index][l];
            let e = if tables.ego_agent_conflict[i][l] { e } else { e.min(cap) };
            unary[i][l] = -(tables.scores.get(l, i + 1) + e);
        }
    }
    PairwiseMRF::new(unary, pair_potentials(tables))
}

/// Same node set as the conditional MRF but with no ego coupling:
/// unary = -E_a only.
pub fn unconditional_mrf_from_tables(tables: &EnergyTables) -> Result<PairwiseMRF> {
    let n = tables.ego_agent_safety.len();
    let k = tables.scores.k();
    let mut unary = vec![vec![0.0; k]; n];
    for i in 0..n {
        for l in 0..k {
            unary[i][l] = -tables.scores.get(l, i + 1);
        }
    }
    PairwiseMRF::new(unary, pair_potentials(tables))
}

/// Full joint MRF with the ego as node 0; its unary absorbs the goal term,
/// ego-agent safety tables become edges. Used by training.
pub fn joint_mrf_from_tables(tables: &EnergyTables) -> Result<PairwiseMRF> {
    let n = tables.ego_agent_safety.len();
    let k = tables.scores.k();
    let mut unary = vec![vec![0.0; k]; n + 1];
    for ke in 0..k {
        unary[0][ke] = -(tables.scores.get(ke, 0) + tables.goal[ke]);
    }
    for i in 0..n {
        for l in 0..k {
            unary[i + 1][l] = -tables.scores.get(l, i + 1);
        }
    }
    let mut pairwise = BTreeMap::new();
    for (i, table) in tables.ego_agent_safety.iter().enumerate() {
        if table.iter().flatten().any(|&e| e != 0.0) {
            // Unclamped pair: either party may give way, so the more
            // reactive one's cap applies; at-fault candidates stay uncapped.
            let cap = tables.interaction_caps[0].max(tables.interaction_caps[i + 1]);
            let neg: Vec<Vec<f64>> = table
                .iter()
                .enumerate()
                .map(|(ke, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(l, &e)| {
                            if tables.agent_ego_conflict[i][ke] || tables.ego_agent_conflict[i][l]
                            {
                                -e
                            } else {
                                -e.min(cap)
                            }
                        })
                        .collect()
                })
                .collect();
            pairwise.insert((0, i + 1), neg);
        }
    }
    for (((i, j), table), (conf_i, conf_j)) in
        tables.agent_pair_safety.iter().zip(&tables.pair_conflict)
    {
        let cap = tables.interaction_caps[i + 1].max(tables.interaction_caps[j + 1]);
        let neg: Vec<Vec<f64>> = table
            .iter()
            .enumerate()
            .map(|(ki, row)| {
                row.iter()
                    .enumerate()
                    .map(|(l, &e)| {
                        if conf_i[ki] || conf_j[l] {
                            -e
                        } else {
                            -e.min(cap)
                        }
                    })
                    .collect()
            })
            .collect();
        pairwise.insert((i + 1, j + 1), neg);
    }
    PairwiseMRF::new(unary, pairwise)
}

fn pair_potentials(tables: &EnergyTables) -> BTreeMap<(usize, usize), Vec<Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (((i, j), table), (conf_i, conf_j)) in
        tables.agent_pair_safety.iter().zip(&tables.pair_conflict)
    {
        let cap = tables.interaction_caps[i + 1].max(tables.interaction_caps[j + 1]);
        let neg: Vec<Vec<f64>> = table
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .enumerate()
                    .map(|(l, &e)| {
                        if conf_i[k] || conf_j[l] {
                            -e
                        } else {
                            -e.min(cap)
                        }
                    })
                    .collect()
            })
            .collect();
        out.insert((*i, *j), neg);
    }
    out
}

/// Build the ego-conditioned MRF straight from a planning context.
pub fn build_conditional_mrf(
    ctx: &PlanningContext,
    sets: &[CandidateSet],
    weights: &EnergyWeights,
    ego_candidate_index: usize,
) -> Result<PairwiseMRF> {
    let tables = build_energy_tables(ctx, sets, weights)?;
    conditional_mrf_from_tables(&tables, ego_candidate_index)
}

/// Build the ego-independent MRF straight from a planning context.
pub fn build_unconditional_mrf(
    ctx: &PlanningContext,
    sets: &[CandidateSet],
    weights: &EnergyWeights,
) -> Result<PairwiseMRF> {
    let tables = build_energy_tables(ctx, sets, weights)?;
    unconditional_mrf_from_tables(&tables)
}

/// Assignment-count cap for exact enumeration.
pub const ENUMERATION_CAP: u128 = 10_000_000;

/// Exact marginals and log-partition by summing over all K^N assignments.
///
/// This is the validation oracle for LBP; it log-sum-exp-stabilizes by
/// subtracting the maximum assignment weight found in a first pass.
pub fn enumerate_exact(mrf: &PairwiseMRF) -> Result<ConditionalMarginals> {
    let n = mrf.n_nodes();
    let k = mrf.n_states();
    if n == 0 {
        return Ok(ConditionalMarginals {
            unary: vec![],
            pairwise: BTreeMap::new(),
            converged: true,
            iterations: 0,
            log_partition: Some(0.0),
        });
    }
    let total = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > ENUMERATION_CAP {
        return Err(Error::Capacity {
            states: total,
            cap: ENUMERATION_CAP,
        });
    }

    let edges: Vec<((usize, usize), &Vec<Vec<f64>>)> =
        mrf.log_pairwise().iter().map(|(&e, t)| (e, t)).collect();
    let log_weight = |assignment: &[usize]| -> f64 {
        let mut lw = 0.0;
        for (i, &x) in assignment.iter().enumerate() {
            lw += mrf.log_unary()[i][x];
        }
        for ((i, j), table) in &edges {
            lw += table[assignment[*i]][assignment[*j]];
        }
        lw
    };

    // first pass: max log-weight
    let mut assignment = vec![0usize; n];
    let mut max_lw = f64::NEG_INFINITY;
    loop {
        max_lw = max_lw.max(log_weight(&assignment));
        if !advance(&mut assignment, k) {
            break;
        }
    }

    // second pass: accumulate normalizer and marginal sums
    let mut z = 0.0f64;
    let mut unary = vec![vec![0.0f64; k]; n];
    let mut pairwise: BTreeMap<(usize, usize), Vec<Vec<f64>>> = mrf
        .edges()
        .map(|e| (e, vec![vec![0.0; k]; k]))
        .collect();
    assignment.iter_mut().for_each(|x| *x = 0);
    loop {
        let w = (log_weight(&assignment) - max_lw).exp();
        z += w;
        for (i, &x) in assignment.iter().enumerate() {
            unary[i][x] += w;
        }
        for ((i, j), table) in pairwise.iter_mut() {
            table[assignment[*i]][assignment[*j]] += w;
        }
        if !advance(&mut assignment, k) {
            break;
        }
    }

    for row in &mut unary {
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    for table in pairwise.values_mut() {
        for row in table.iter_mut() {
            for v in row.iter_mut() {
                *v /= z;
            }
        }
    }
    Ok(ConditionalMarginals {
        unary,
        pairwise,
        converged: true,
        iterations: 1,
        log_partition: Some(max_lw + z.ln()),
    })
}

fn advance(assignment: &mut [usize], k: usize) -> bool {
    for digit in assignment.iter_mut() {
        *digit += 1;
        if *digit < k {
            return true;
        }
        *digit = 0;
    }
    false
}

/// Sum-product loopy belief propagation with a synchronous flooding schedule.
///
/// Messages are normalized each round; damping is a convex combination of the
/// old and new log-messages. Stops when the largest absolute log-message
/// change drops below tolerance.
pub fn lbp_marginals(mrf: &PairwiseMRF, opts: &LbpOptions) -> Result<ConditionalMarginals> {
    opts.validate()?;
    let n = mrf.n_nodes();
    let k = mrf.n_states();

    // directed edges: (from, to, edge key, transposed?)
    let mut directed: Vec<(usize, usize, (usize, usize))> = Vec::new();
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n]; // indices into `directed` of incoming messages
    for (i, j) in mrf.edges() {
        directed.push((i, j, (i, j)));
        directed.push((j, i, (i, j)));
    }
    for (idx, &(_, to, _)) in directed.iter().enumerate() {
        neighbours[to].push(idx);
    }

    let uniform = -((k as f64).ln());
    let mut messages: Vec<Vec<f64>> = vec![vec![uniform; k]; directed.len()];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let mut new_messages = messages.clone();
        let mut max_delta: f64 = 0.0;
        for (idx, &(from, to, key)) in directed.iter().enumerate() {
            let table = &mrf.log_pairwise()[&key];
            // pre-belief of `from` excluding the message coming back from `to`
            let mut pre = mrf.log_unary()[from].clone();
            for &in_idx in &neighbours[from] {
                if directed[in_idx].0 != to {
                    for (p, m) in pre.iter_mut().zip(&messages[in_idx]) {
                        *p += m;
                    }
                }
            }
            let mut msg = vec![0.0; k];
            let mut scratch = vec![0.0; k];
            for xt in 0..k {
                for xf in 0..k {
                    let psi = if from == key.0 { table[xf][xt] } else { table[xt][xf] };
                    scratch[xf] = pre[xf] + psi;
                }
                msg[xt] = log_sum_exp(&scratch);
            }
            let norm = log_sum_exp(&msg);
            for m in msg.iter_mut() {
                *m -= norm;
            }
            for ((nm, old), raw) in new_messages[idx].iter_mut().zip(&messages[idx]).zip(&msg) {
                let damped = opts.damping * *old + (1.0 - opts.damping) * raw;
                max_delta = max_delta.max((damped - *old).abs());
                *nm = damped;
            }
        }
        messages = new_messages;
        if max_delta < opts.tolerance {
            converged = true;
            break;
        }
    }
    if directed.is_empty() {
        converged = true;
        iterations = 1;
    }

    // unary beliefs
    let mut unary = Vec::with_capacity(n);
    for i in 0..n {
        let mut b = mrf.log_unary()[i].clone();
        for &in_idx in &neighbours[i] {
            for (p, m) in b.iter_mut().zip(&messages[in_idx]) {
                *p += m;
            }
        }
        let norm = log_sum_exp(&b);
        unary.push(b.into_iter().map(|v| (v - norm).exp()).collect::<Vec<f64>>());
    }

    // pairwise beliefs
    let mut pairwise = BTreeMap::new();
    for (i, j) in mrf.edges() {
        let table = &mrf.log_pairwise()[&(i, j)];
        let mut pre_i = mrf.log_unary()[i].clone();
        for &in_idx in &neighbours[i] {
            if directed[in_idx].0 != j {
                for (p, m) in pre_i.iter_mut().zip(&messages[in_idx]) {
                    *p += m;
                }
            }
        }
        let mut pre_j = mrf.log_unary()[j].clone();
        for &in_idx in &neighbours[j] {
            if directed[in_idx].0 != i {
                for (p, m) in pre_j.iter_mut().zip(&messages[in_idx]) {
                    *p += m;
                }
            }
        }
        let mut log_b = vec![vec![0.0; k]; k];
        let mut flat = Vec::with_capacity(k * k);
        for xi in 0..k {
            for xj in 0..k {
                let v = table[xi][xj] + pre_i[xi] + pre_j[xj];
                log_b[xi][xj] = v;
                flat.push(v);
            }
        }
        let norm = log_sum_exp(&flat);
        let belief: Vec<Vec<f64>> = log_b
            .into_iter()
            .map(|row| row.into_iter().map(|v| (v - norm).exp()).collect())
            .collect();
        pairwise.insert((i, j), belief);
    }

    Ok(ConditionalMarginals {
        unary,
        pairwise,
        converged,
        iterations,
        log_partition: None,
    })
}

/// Total-variation distance between two probability rows.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mrf(n: usize, k: usize, edges: &[(usize, usize)], max_abs: f64, seed: u64) -> PairwiseMRF {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unary: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.gen_range(-max_abs..max_abs)).collect())
            .collect();
        let mut pairwise = BTreeMap::new();
        for &(i, j) in edges {
            let table: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| rng.gen_range(-max_abs..max_abs)).collect())
                .collect();
            pairwise.insert((i, j), table);
        }
        PairwiseMRF::new(unary, pairwise).unwrap()
    }

    #[test]
    fn single_node_softmax() {
        let mrf = PairwiseMRF::new(vec![vec![0.0, 1.0, 2.0]], BTreeMap::new()).unwrap();
        let exact = enumerate_exact(&mrf).unwrap();
        let z: f64 = (0.0f64).exp() + (1.0f64).exp() + (2.0f64).exp();
        for (i, &e) in [0.0, 1.0, 2.0].iter().enumerate() {
            assert_relative_eq!(exact.unary[0][i], (e as f64).exp() / z, epsilon = 1e-12);
        }
        assert_relative_eq!(exact.log_partition.unwrap(), z.ln(), epsilon = 1e-12);
        let lbp = lbp_marginals(&mrf, &LbpOptions::default()).unwrap();
        assert!(lbp.converged);
        for i in 0..3 {
            assert_relative_eq!(lbp.unary[0][i], exact.unary[0][i], epsilon = 1e-12);
        }
    }

    #[test]
    fn two_nodes_uniform_potentials() {
        let k = 4;
        let mut pairwise = BTreeMap::new();
        pairwise.insert((0, 1), vec![vec![0.0; k]; k]);
        let mrf = PairwiseMRF::new(vec![vec![0.0; k]; 2], pairwise).unwrap();
        let exact = enumerate_exact(&mrf).unwrap();
        for row in &exact.unary {
            for &p in row {
                assert_relative_eq!(p, 1.0 / k as f64, epsilon = 1e-12);
            }
        }
        for table in exact.pairwise.values() {
            for row in table {
                for &p in row {
                    assert_relative_eq!(p, 1.0 / (k * k) as f64, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn lbp_exact_on_trees() {
        // chain 0-1-2 plus a leaf 3 off node 1
        let mrf = random_mrf(4, 3, &[(0, 1), (1, 2), (1, 3)], 2.0, 11);
        let exact = enumerate_exact(&mrf).unwrap();
        let opts = LbpOptions {
            max_iterations: 200,
            tolerance: 1e-13,
            ..Default::default()
        };
        let lbp = lbp_marginals(&mrf, &opts).unwrap();
        assert!(lbp.converged);
        for (le, lr) in exact.unary.iter().zip(&lbp.unary) {
            for (a, b) in le.iter().zip(lr) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
        for (key, te) in &exact.pairwise {
            let tl = &lbp.pairwise[key];
            for (re, rl) in te.iter().zip(tl) {
                for (a, b) in re.iter().zip(rl) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn lbp_close_on_triangle() {
        for seed in [3u64, 4, 6] {
            let mrf = random_mrf(3, 4, &[(0, 1), (0, 2), (1, 2)], 2.0, seed);
            let exact = enumerate_exact(&mrf).unwrap();
            let lbp = lbp_marginals(&mrf, &LbpOptions::default()).unwrap();
            for (e, l) in exact.unary.iter().zip(&lbp.unary) {
                assert!(total_variation(e, l) <= 0.05, "seed {seed}");
            }
        }
    }

    #[test]
    fn marginal_rows_sum_to_one() {
        let mrf = random_mrf(4, 5, &[(0, 1), (1, 2), (2, 3), (0, 3)], 3.0, 99);
        let opts = LbpOptions {
            max_iterations: 2, // deliberately unconverged
            ..Default::default()
        };
        let lbp = lbp_marginals(&mrf, &opts).unwrap();
        for row in &lbp.unary {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
        for table in lbp.pairwise.values() {
            let s: f64 = table.iter().flatten().sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn shift_invariance() {
        let mrf = random_mrf(3, 4, &[(0, 1), (1, 2)], 2.0, 7);
        let mut shifted_unary = mrf.log_unary().to_vec();
        for v in shifted_unary[1].iter_mut() {
            *v += 5.0;
        }
        let shifted = PairwiseMRF::new(shifted_unary, mrf.log_pairwise().clone()).unwrap();
        let a = lbp_marginals(&mrf, &LbpOptions::default()).unwrap();
        let b = lbp_marginals(&shifted, &LbpOptions::default()).unwrap();
        for (ra, rb) in a.unary.iter().zip(&b.unary) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let ea = enumerate_exact(&mrf).unwrap();
        let eb = enumerate_exact(&shifted).unwrap();
        for (ra, rb) in ea.unary.iter().zip(&eb.unary) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lbp_deterministic() {
        let mrf = random_mrf(3, 4, &[(0, 1), (0, 2), (1, 2)], 2.0, 21);
        let a = lbp_marginals(&mrf, &LbpOptions::default()).unwrap();
        let b = lbp_marginals(&mrf, &LbpOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pairwise_belief_consistency() {
        let mrf = random_mrf(3, 4, &[(0, 1), (1, 2)], 1.5, 42);
        let lbp = lbp_marginals(&mrf, &LbpOptions::default()).unwrap();
        assert!(lbp.converged);
        for (&(i, j), table) in &lbp.pairwise {
            let k = mrf.n_states();
            for xi in 0..k {
                let row_sum: f64 = table[xi].iter().sum();
                assert!((row_sum - lbp.unary[i][xi]).abs() < 1e-6);
            }
            for xj in 0..k {
                let col_sum: f64 = (0..k).map(|xi| table[xi][xj]).sum();
                assert!((col_sum - lbp.unary[j][xj]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn conditioning_matches_direct_enumeration() {
        let mrf = random_mrf(3, 4, &[(0, 1), (0, 2), (1, 2)], 2.0, 8);
        let exact = enumerate_exact(&mrf).unwrap();
        // conditional p(x1, x2 | x0 = 2) via reduction vs. direct ratio
        let reduced = mrf.condition(0, 2).unwrap();
        let reduced_exact = enumerate_exact(&reduced).unwrap();
        // ratio check on the unary of old node 1 (new node 0)
        let joint01 = &exact.pairwise[&(0, 1)];
        let p0 = exact.unary[0][2];
        for x1 in 0..4 {
            assert_relative_eq!(reduced_exact.unary[0][x1], joint01[2][x1] / p0, epsilon = 1e-9);
        }
    }

    #[test]
    fn enumeration_capacity_error() {
        let n = 10;
        let k = 10;
        let unary = vec![vec![0.0; k]; n];
        let mrf = PairwiseMRF::new(unary, BTreeMap::new()).unwrap();
        assert!(matches!(enumerate_exact(&mrf), Err(Error::Capacity { .. })));
    }

    #[test]
    fn non_finite_potentials_rejected() {
        let unary = vec![vec![0.0, f64::INFINITY]];
        assert!(PairwiseMRF::new(unary, BTreeMap::new()).is_err());
    }

    #[test]
    fn pinned_three_node_fixture() {
        // seed-7 triangle, K = 5; values frozen from the enumeration oracle
        let mrf = random_mrf(3, 5, &[(0, 1), (0, 2), (1, 2)], 2.0, 7);
        let exact = enumerate_exact(&mrf).unwrap();
        for row in &exact.unary {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let pin0 = [
            0.017967580274952516,
            0.014696942933377732,
            0.3890685552328915,
            0.4037831693241805,
            0.17448375223459844,
        ];
        let pin1 = [
            0.06533568152474435,
            0.024662876474857324,
            0.17978445143419391,
            0.031070073468641417,
            0.6991469170975635,
        ];
        for (a, b) in exact.unary[0].iter().zip(&pin0) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in exact.unary[1].iter().zip(&pin1) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(exact.log_partition.unwrap(), 6.728496986758751, epsilon = 1e-12);
        let pin01_row2 = [
            0.012723892237246258,
            0.021162910237175266,
            0.010712470478043875,
            0.004500636518522014,
            0.33996864576190405,
        ];
        for (a, b) in exact.pairwise[&(0, 1)][2].iter().zip(&pin01_row2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}

