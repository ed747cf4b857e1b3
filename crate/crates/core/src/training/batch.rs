//! Encoded training corpus and per-step batch assembly.

use rand::Rng;

use super::negatives::{assemble_negatives_preferring, sample_random_negatives, NegativeSet};
use super::TrainConfig;
use crate::error::{Error, Result};

/// Item as seen by the item tower: title token ids followed by feature ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedItem {
    pub id: String,
    pub tokens: Vec<u32>,
}

/// One positive (query, item) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    /// Query token ids followed by any user feature ids.
    pub query: Vec<u32>,
    /// Index into [`TrainCorpus::items`].
    pub item: usize,
    /// Labeled negatives for this query (indices into the corpus). They
    /// enter the shared random pool of any batch containing this pair.
    pub hard_negatives: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainCorpus {
    pub items: Vec<EncodedItem>,
    pub pairs: Vec<EncodedPair>,
}

/// One training step worth of examples with their negative sets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub queries: Vec<Vec<u32>>,
    /// Positive item per example (corpus indices).
    pub positives: Vec<usize>,
    /// Random negatives shared by the whole batch (corpus indices).
    pub random_pool: Vec<usize>,
    /// Per example: positions into `random_pool` and into the batch.
    pub negatives: Vec<NegativeSet>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Every item needing an embedding this step: positives, then the random pool.
    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.positives.iter().chain(&self.random_pool).copied()
    }
}

/// Builds the batch for the given pair indices: shared random pool (labeled
/// negatives of the batch's queries first, uniform draws after), then a
/// mixed negative set per example. Items equal to the example's own positive
/// are never used as its negatives.
pub fn assemble_batch<R: Rng + ?Sized>(
    corpus: &TrainCorpus,
    pair_indices: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Batch> {
    if corpus.items.is_empty() || pair_indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs: Vec<&EncodedPair> = pair_indices.iter().map(|&i| &corpus.pairs[i]).collect();
    let positives: Vec<usize> = pairs.iter().map(|p| p.item).collect();

    let mut random_pool: Vec<usize> = Vec::with_capacity(config.n_rand);
    for p in &pairs {
        if let Some(&neg) = p.hard_negatives.first() {
            if random_pool.len() < config.n_rand && !random_pool.contains(&neg) {
                random_pool.push(neg);
            }
        }
    }
    let fill = config.n_rand - random_pool.len();
    random_pool.extend(sample_random_negatives(corpus.items.len(), fill, rng));

    let mut negatives = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let own = pair.item;
        let random: Vec<usize> = (0..random_pool.len())
            .filter(|&p| random_pool[p] != own)
            .collect();
        let batch: Vec<usize> = (0..positives.len())
            .filter(|&k| k != i && positives[k] != own)
            .collect();
        let preferred: Vec<usize> = pair
            .hard_negatives
            .iter()
            .filter_map(|n| random_pool.iter().position(|r| r == n))
            .collect();
        let set = if random.is_empty() && batch.is_empty() {
            NegativeSet::default()
        } else {
            assemble_negatives_preferring(&random, &batch, &preferred, config.alpha, config.n_neg, rng)?
        };
        negatives.push(set);
    }

    Ok(Batch {
        queries: pairs.iter().map(|p| p.query.clone()).collect(),
        positives,
        random_pool,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(n_items: usize, pair_items: &[usize]) -> TrainCorpus {
        TrainCorpus {
            items: (0..n_items)
                .map(|i| EncodedItem {
                    id: format!("i{i}"),
                    tokens: vec![1 + i as u32],
                })
                .collect(),
            pairs: pair_items
                .iter()
                .map(|&item| EncodedPair {
                    query: vec![1],
                    item,
                    hard_negatives: vec![],
                })
                .collect(),
        }
    }

    fn config(alpha: f64, n_neg: usize, n_rand: usize) -> TrainConfig {
        TrainConfig {
            alpha,
            n_neg,
            n_rand,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn own_positive_never_a_negative() {
        let c = corpus(3, &[0, 1, 0, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = assemble_batch(&c, &[0, 1, 2, 3], &config(0.5, 8, 16), &mut rng).unwrap();
        assert_eq!(b.random_pool.len(), 16);
        for (i, set) in b.negatives.iter().enumerate() {
            for &p in &set.random {
                assert_ne!(b.random_pool[p], b.positives[i]);
            }
            for &k in &set.batch {
                assert_ne!(k, i);
                assert_ne!(b.positives[k], b.positives[i]);
            }
        }
        // example 0 and 2 share item 0, so each has only two usable batch peers
        assert_eq!(b.negatives[0].batch, vec![1, 3]);
    }

    #[test]
    fn full_batch_quota_gets_b_minus_one() {
        let c = corpus(10, &[0, 1, 2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = assemble_batch(&c, &[0, 1, 2, 3, 4], &config(0.0, 64, 4), &mut rng).unwrap();
        for set in &b.negatives {
            assert!(set.random.is_empty());
            assert_eq!(set.batch.len(), 4);
        }
    }

    #[test]
    fn hard_negatives_enter_the_pool() {
        let mut c = corpus(100, &[0, 1]);
        c.pairs[0].hard_negatives = vec![77];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = assemble_batch(&c, &[0, 1], &config(0.5, 4, 8), &mut rng).unwrap();
        assert_eq!(b.random_pool[0], 77);
        assert!(b.negatives[0].random.contains(&0));
        assert_eq!(b.items().count(), 2 + 8);
    }
}
