//! Random, batch and mixed negative sets.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// `n_rand` corpus indices drawn uniformly with replacement. The returned set
/// is shared by every example of one batch.
pub fn sample_random_negatives<R: Rng + ?Sized>(corpus_len: usize, n_rand: usize, rng: &mut R) -> Vec<usize> {
    assert!(corpus_len > 0, "random negatives need a non-empty corpus");
    (0..n_rand).map(|_| rng.random_range(0..corpus_len)).collect()
}

/// Positives of every other example in the batch, duplicates retained.
pub fn batch_negatives<T: Clone>(batch_positives: &[T], i: usize) -> Vec<T> {
    batch_positives
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, s)| s.clone())
        .collect()
}

/// Negatives of one example, as positions into the shared random pool and
/// into the batch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NegativeSet {
    pub random: Vec<usize>,
    pub batch: Vec<usize>,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.random.len() + self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Number of negatives drawn from the random source.
pub fn random_quota(alpha: f64, n_neg: usize) -> usize {
    ((alpha * n_neg as f64).round() as usize).min(n_neg)
}

fn take<R: Rng + ?Sized>(from: &[usize], preferred: &[usize], quota: usize, rng: &mut R) -> Vec<usize> {
    let mut out: Vec<usize> = preferred
        .iter()
        .copied()
        .filter(|p| from.contains(p))
        .take(quota)
        .collect();
    let rest: Vec<usize> = from.iter().copied().filter(|p| !out.contains(p)).collect();
    let need = (quota - out.len()).min(rest.len());
    out.extend(sample(rng, rest.len(), need).into_iter().map(|i| rest[i]));
    out.sort_unstable();
    out
}

/// `round(alpha * n_neg)` candidates from `random`, the rest from `batch`,
/// both without replacement. A short source contributes everything it has
/// and is not backfilled from the other one.
pub fn assemble_negatives<R: Rng + ?Sized>(
    random: &[usize],
    batch: &[usize],
    alpha: f64,
    n_neg: usize,
    rng: &mut R,
) -> Result<NegativeSet> {
    assemble_negatives_preferring(random, batch, &[], alpha, n_neg, rng)
}

/// Like [`assemble_negatives`], but `preferred` random candidates (e.g.
/// human-labeled negatives for this query) fill the random quota first.
pub fn assemble_negatives_preferring<R: Rng + ?Sized>(
    random: &[usize],
    batch: &[usize],
    preferred: &[usize],
    alpha: f64,
    n_neg: usize,
    rng: &mut R,
) -> Result<NegativeSet> {
    if random.is_empty() && batch.is_empty() {
        return Err(Error::NoNegatives);
    }
    let q_rand = random_quota(alpha, n_neg);
    Ok(NegativeSet {
        random: take(random, preferred, q_rand, rng),
        batch: take(batch, &[], n_neg - q_rand, rng),
    })
}
