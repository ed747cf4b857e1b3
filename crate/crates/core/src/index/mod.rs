//! Item-embedding index for top-K inner-product search.
//!
//! Below `exact_threshold` items the index is a flat array and search is
//! exhaustive; above it a layered proximity graph answers approximately.
//! Results are always ordered by score descending, then item id ascending.

mod hnsw;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use hnsw::Graph;
pub use io::{from_bytes, load_index, save_index, to_bytes, INDEX_MAGIC, INDEX_VERSION};

pub const UNIT_NORM_TOLERANCE: f32 = 1e-5;

/// f32 inner product with independent partial sums, shared by every search
/// path so exact and approximate scores are bit-identical.
#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Graph degree `M` (layer 0 keeps up to `2M`).
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Corpora smaller than this are stored flat and searched exactly.
    pub exact_threshold: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 100,
            exact_threshold: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub score: f32,
}

/// Hit addressed by internal position, used when merging several searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawHit {
    pub pos: u32,
    pub score: f32,
}

#[derive(Debug, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    /// Position of each item in ascending-id order, for tie-breaking.
    id_rank: Vec<u32>,
    params: IndexParams,
    graph: Option<Graph>,
}

fn id_ranks(ids: &[String]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..ids.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| ids[a as usize].cmp(&ids[b as usize]));
    let mut rank = vec![0u32; ids.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i as usize] = r as u32;
    }
    rank
}

impl EmbeddingIndex {
    pub fn build<I>(items: I, params: IndexParams) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let mut dim = None;
        let mut seen = std::collections::HashSet::new();
        for (id, v) in items {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d || d == 0 {
                return Err(Error::Dimension {
                    context: format!("vector of item {id:?}"),
                    expected: d,
                    found: v.len(),
                });
            }
            let norm = dot_f32(&v, &v).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotUnitNorm { id, norm });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            vectors.extend_from_slice(&v);
        }
        let dim = dim.ok_or(Error::EmptyDataset)?;
        let graph = (ids.len() >= params.exact_threshold)
            .then(|| Graph::build(&vectors, dim, params.m.max(2), params.ef_construction, params.seed));
        Ok(Self {
            dim,
            id_rank: id_ranks(&ids),
            ids,
            vectors,
            params,
            graph,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn is_exact(&self) -> bool {
        self.graph.is_none()
    }

    pub fn id(&self, pos: u32) -> &str {
        &self.ids[pos as usize]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, pos: u32) -> &[f32] {
        let p = pos as usize;
        &self.vectors[p * self.dim..(p + 1) * self.dim]
    }

    /// Total order used for every result list.
    pub fn compare_hits(&self, a: &RawHit, b: &RawHit) -> std::cmp::Ordering {
        b.score
            .total_cmp(&a.score)
            .then_with(|| self.id_rank[a.pos as usize].cmp(&self.id_rank[b.pos as usize]))
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::Dimension {
                context: "query vector".into(),
                expected: self.dim,
                found: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(())
    }

    fn exhaustive(&self, query: &[f32], k: usize) -> Vec<RawHit> {
        let mut hits: Vec<RawHit> = (0..self.len() as u32)
            .map(|pos| RawHit {
                pos,
                score: dot_f32(query, self.vector(pos)),
            })
            .collect();
        let k = k.min(hits.len());
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, |a, b| self.compare_hits(a, b));
            hits.truncate(k);
        }
        hits.sort_unstable_by(|a, b| self.compare_hits(a, b));
        hits
    }

    /// Top-k by internal position, using the configured search beam.
    pub fn search_raw(&self, query: &[f32], k: usize) -> Result<Vec<RawHit>> {
        self.search_raw_with_beam(query, k, self.params.ef_search)
    }

    pub fn search_raw_with_beam(&self, query: &[f32], k: usize, ef: usize) -> Result<Vec<RawHit>> {
        self.check_query(query, k)?;
        let graph = match &self.graph {
            Some(g) if k < self.len() => g,
            _ => return Ok(self.exhaustive(query, k)),
        };
        let found = graph.search(&self.vectors, self.dim, query, ef.max(k));
        let mut hits: Vec<RawHit> = found
            .into_iter()
            .map(|s| RawHit {
                pos: s.node,
                score: s.score,
            })
            .collect();
        hits.sort_unstable_by(|a, b| self.compare_hits(a, b));
        hits.truncate(k);
        Ok(hits)
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.search_with_beam(query, k, self.params.ef_search)
    }

    pub fn search_with_beam(&self, query: &[f32], k: usize, ef: usize) -> Result<Vec<SearchHit>> {
        Ok(self.to_hits(&self.search_raw_with_beam(query, k, ef)?))
    }

    /// Exact top-k over every stored vector, regardless of mode.
    pub fn brute_force(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.check_query(query, k)?;
        Ok(self.to_hits(&self.exhaustive(query, k)))
    }

    pub fn to_hits(&self, raw: &[RawHit]) -> Vec<SearchHit> {
        raw.iter()
            .map(|h| SearchHit {
                id: self.ids[h.pos as usize].clone(),
                score: h.score,
            })
            .collect()
    }
}

/// Exact top-k by inner product over `(id, vector)` pairs. Ties are broken
/// by ascending id.
pub fn brute_force_search(items: &[(String, Vec<f32>)], query: &[f32], k: usize) -> Vec<SearchHit> {
    let mut hits: Vec<SearchHit> = items
        .iter()
        .map(|(id, v)| SearchHit {
            id: id.clone(),
            score: dot_f32(query, v),
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    hits.truncate(k);
    hits
}

/// Fraction of `truth` ids present in `found`.
pub fn recall(found: &[SearchHit], truth: &[SearchHit]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let set: std::collections::HashSet<&str> = found.iter().map(|h| h.id.as_str()).collect();
    truth.iter().filter(|h| set.contains(h.id.as_str())).count() as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
        loop {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let n = dot_f32(&v, &v).sqrt();
            if n > 1e-3 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    fn corpus(n: usize, dim: usize, seed: u64) -> Vec<(String, Vec<f32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| (format!("item{i:05}"), random_unit(&mut rng, dim))).collect()
    }

    #[test]
    fn single_item_always_returned() {
        let idx = EmbeddingIndex::build(vec![("a".to_string(), vec![0.6, 0.8])], IndexParams::default()).unwrap();
        let hits = idx.search(&[1.0, 0.0], 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "a");
        assert_eq!(hits[0].score, dot_f32(&[1.0, 0.0], &[0.6, 0.8]));
    }

    #[test]
    fn build_errors_name_offender() {
        let p = IndexParams::default();
        match EmbeddingIndex::build(vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![1.0])], p.clone()) {
            Err(Error::Dimension { context, .. }) => assert!(context.contains("\"b\"")),
            other => panic!("{other:?}"),
        }
        match EmbeddingIndex::build(vec![("a".into(), vec![1.0, 0.0]), ("a".into(), vec![0.0, 1.0])], p.clone()) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            EmbeddingIndex::build(vec![("a".into(), vec![2.0, 0.0])], p.clone()),
            Err(Error::NotUnitNorm { .. })
        ));
        assert!(EmbeddingIndex::build(Vec::new(), p).is_err());
    }

    #[test]
    fn self_match_and_full_ranking_in_flat_mode() {
        let items = corpus(500, 16, 1);
        let idx = EmbeddingIndex::build(items.clone(), IndexParams::default()).unwrap();
        assert!(idx.is_exact());
        for (id, v) in items.iter().take(20) {
            let top = &idx.search(v, 1).unwrap()[0];
            assert_eq!(&top.id, id);
            assert!((top.score - 1.0).abs() < 1e-5);
        }
        let q = &items[3].1;
        assert_eq!(idx.search(q, 500).unwrap(), brute_force_search(&items, q, 500));
        assert_eq!(idx.search(q, 10_000).unwrap().len(), 500);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let items: Vec<(String, Vec<f32>)> = ["c", "a", "b"]
            .iter()
            .map(|id| (id.to_string(), vec![1.0, 0.0]))
            .collect();
        let hits = brute_force_search(&items, &[0.0, 1.0], 3);
        assert!(hits.iter().all(|h| h.score == 0.0));
        let ids: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let idx = EmbeddingIndex::build(items.clone(), IndexParams::default()).unwrap();
        assert_eq!(idx.search(&[0.0, 1.0], 3).unwrap(), hits);
    }

    #[test]
    fn graph_mode_is_deterministic_and_accurate() {
        let items = corpus(3000, 16, 2);
        let params = IndexParams {
            exact_threshold: 1000,
            ..IndexParams::default()
        };
        let a = EmbeddingIndex::build(items.clone(), params.clone()).unwrap();
        let b = EmbeddingIndex::build(items.clone(), params).unwrap();
        assert!(!a.is_exact());
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut total = 0.0;
        for _ in 0..50 {
            let q = random_unit(&mut rng, 16);
            let found = a.search(&q, 10).unwrap();
            assert!(found.windows(2).all(|w| w[0].score >= w[1].score));
            total += recall(&found, &a.brute_force(&q, 10).unwrap());
        }
        assert!(total / 50.0 > 0.95, "recall {}", total / 50.0);
    }

    #[test]
    fn query_errors() {
        let idx = EmbeddingIndex::build(corpus(10, 4, 0), IndexParams::default()).unwrap();
        assert!(matches!(idx.search(&[1.0, 0.0], 3), Err(Error::Dimension { .. })));
        assert!(idx.search(&[1.0, 0.0, 0.0, 0.0], 0).is_err());
    }
}
