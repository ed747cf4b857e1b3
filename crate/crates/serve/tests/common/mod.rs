#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twotower_core::checkpoint::ModelInfo;
use twotower_core::index::{EmbeddingIndex, IndexParams};
use twotower_core::servable::{item_vectors, RetrievalDefaults, Servable};
use twotower_core::tokenizer::Vocabulary;
use twotower_core::towers::{TowerConfig, TwoTower};
use twotower_core::training::EncodedItem;

pub fn phrase(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| format!("w{}", rng.random_range(0..200))).collect::<Vec<_>>().join(" ")
}

/// Untrained two-head model over `n_items` random titles plus matching queries.
pub fn servable(name: &str, n_items: usize, seed: u64) -> (Arc<Servable>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let titles: Vec<String> = (0..n_items).map(|_| phrase(&mut rng, 4)).collect();
    let queries: Vec<String> = (0..100).map(|_| phrase(&mut rng, 2)).collect();
    let vocab = Vocabulary::build(titles.iter().chain(&queries), 1).unwrap();
    let config = TowerConfig {
        dim: 16,
        heads: 2,
        agg_dim: 16,
        mlp_hidden: vec![32],
        vocab_size: vocab.len(),
    };
    let towers = TwoTower::init(config.clone(), seed).unwrap();
    let items: Vec<EncodedItem> = titles
        .iter()
        .enumerate()
        .map(|(i, t)| EncodedItem {
            id: format!("item{i:05}"),
            tokens: vocab.encode(t).0,
        })
        .collect();
    let index = EmbeddingIndex::build(item_vectors(&towers.item, &items).unwrap(), IndexParams::default()).unwrap();
    let info = ModelInfo::new(vocab.hash(), 1.0);
    let s = Servable::new(name, vocab, config, towers.query, info, index, RetrievalDefaults::default()).unwrap();
    (Arc::new(s), queries)
}
