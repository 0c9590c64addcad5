//! Compare loopy belief propagation against exact enumeration on a random
//! loopy MRF and report the per-node total-variation distance.
//!
//! Usage: lbp_vs_exact [seed]

use std::collections::BTreeMap;

use interplan::inference::{
    enumerate_exact, lbp_marginals, total_variation, LbpOptions, PairwiseMRF,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (4, 3);

    // a ring plus one chord: two loops sharing an edge
    let edges = [(0usize, 1usize), (1, 2), (2, 3), (0, 3), (0, 2)];
    let unary: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut pairwise = BTreeMap::new();
    for &(i, j) in &edges {
        let strength: f64 = rng.gen_range(0.0..1.0);
        let table: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..k)
                    .map(|_| strength * rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        pairwise.insert((i, j), table);
    }
    let mrf = PairwiseMRF::new(unary, pairwise)?;

    let exact = enumerate_exact(&mrf)?;
    let lbp = lbp_marginals(&mrf, &LbpOptions::default())?;
    println!(
        "lbp converged = {} after {} iterations",
        lbp.converged, lbp.iterations
    );
    for i in 0..n {
        let tv = total_variation(&lbp.unary[i], &exact.unary[i]);
        println!("node {i}: tv = {tv:.3e}");
        println!("  lbp   {:?}", round3(&lbp.unary[i]));
        println!("  exact {:?}", round3(&exact.unary[i]));
    }
    Ok(())
}

fn round3(row: &[f64]) -> Vec<f64> {
    row.iter().map(|v| (v * 1e3).round() / 1e3).collect()
}
