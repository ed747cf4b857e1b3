//! Analytic gradients of the full attention + hinge loss against central
//! finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twotower_core::towers::{TowerConfig, TwoTower};
use twotower_core::training::{assemble_batch, batch_loss, loss_and_grad, EncodedItem, EncodedPair, LossParams, TrainConfig, TrainCorpus};

const EPS: f64 = 1e-4;

fn random_corpus(rng: &mut ChaCha8Rng, vocab: usize) -> TrainCorpus {
    let seq = |rng: &mut ChaCha8Rng| -> Vec<u32> { (0..rng.random_range(1..4)).map(|_| rng.random_range(1..vocab as u32)).collect() };
    let items = (0..8).map(|i| EncodedItem { id: format!("i{i}"), tokens: seq(rng) }).collect();
    let pairs = (0..3).map(|_| EncodedPair { query: seq(rng), item: rng.random_range(0..8), hard_negatives: vec![] }).collect();
    TrainCorpus { items, pairs }
}

/// Largest relative error over every parameter for one seed.
fn max_relative_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 12;
    let config = TowerConfig { dim: 4, heads: 2, agg_dim: 4, mlp_hidden: vec![6], vocab_size: vocab };
    let mut towers = TwoTower::init(config, seed).unwrap();
    // move off the initialization point: zero biases can leave an item's
    // pre-norm output exactly zero, where normalization has no derivative
    for slot in towers.tensors_mut() {
        for v in slot.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let corpus = random_corpus(&mut rng, vocab);
    let params = LossParams { beta: 1.0, delta: 0.1 };
    let tc = TrainConfig { batch_size: 3, n_neg: 4, n_rand: 3, alpha: 0.5, ..TrainConfig::default() };
    let batch = assemble_batch(&corpus, &[0, 1, 2], &tc, &mut rng).unwrap();
    let (stats, grad) = loss_and_grad(&towers, &corpus, &batch, params).unwrap();
    assert!(stats.active_terms > 0, "seed {seed}: no active hinge term");
    let analytic: Vec<f64> = grad.tensors().iter().flat_map(|t| t.data.to_vec()).collect();

    let mut probe = towers.clone();
    let mut worst: f64 = 0.0;
    let n_tensors = probe.tensors().len();
    let mut flat = 0;
    for t in 0..n_tensors {
        let len = probe.tensors()[t].data.len();
        for j in 0..len {
            let orig = probe.tensors_mut()[t][j];
            probe.tensors_mut()[t][j] = orig + EPS;
            let up = batch_loss(&probe, &corpus, &batch, params).unwrap();
            probe.tensors_mut()[t][j] = orig - EPS;
            let down = batch_loss(&probe, &corpus, &batch, params).unwrap();
            probe.tensors_mut()[t][j] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let a = analytic[flat];
            // absolute floor so that near-zero gradients compare on absolute error
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
            flat += 1;
        }
    }
    worst
}

#[test]
fn analytic_matches_finite_differences_over_twenty_seeds() {
    let all: Vec<f64> = (0..20).map(max_relative_error).collect();
    assert!(all.iter().all(|&e| e < 1e-3), "{all:?}");
}
