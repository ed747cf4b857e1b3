//! Small temperatures turn the soft dot product into the largest head score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twotower_core::towers::QueryHeads;
use twotower_core::training::scoring::score;

const BETA: f64 = 1e-4;

fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn small_beta_selects_max_inner_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    let mut worst = 0.0f64;
    while cases < 1000 {
        let d = rng.random_range(2..16);
        let m = rng.random_range(2..6);
        let heads: Vec<Vec<f64>> = (0..m).map(|_| random_vec(&mut rng, d)).collect();
        let g = random_vec(&mut rng, d);
        let mut ips: Vec<f64> = heads.iter().map(|h| h.iter().zip(&g).map(|(a, b)| a * b).sum()).collect();
        ips.sort_by(|a, b| b.total_cmp(a));
        if ips[0] - ips[1] < 0.1 {
            continue;
        }
        cases += 1;
        let s = score(&QueryHeads::from_heads(&heads), &g, BETA);
        worst = worst.max((s - ips[0]).abs());
    }
    println!("max |score - max inner product| = {worst:e}");
    assert!(worst < 1e-6, "{worst}");
}
