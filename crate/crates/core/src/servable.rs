//! Query tower and item index fused into one in-process unit.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, ModelInfo};
use crate::error::{Error, Result};
use crate::index::{load_index, EmbeddingIndex, RawHit};
use crate::tokenizer::{TokenSequence, Vocabulary};
use crate::training::EncodedItem;
use crate::towers::{ItemTowerParams, QueryHeads, QueryTowerParams, TowerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalDefaults {
    pub k: usize,
    /// Each head fetches `ceil(k * fanout)` candidates before merging.
    pub fanout: f64,
    /// Search beam; `None` uses the index default.
    pub ef_search: Option<usize>,
}

impl Default for RetrievalDefaults {
    fn default() -> Self {
        Self {
            k: 100,
            fanout: 1.0,
            ef_search: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub item_id: String,
    pub score: f32,
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    /// Set when the query could not be answered meaningfully.
    pub warning: Option<String>,
}

#[derive(Debug)]
pub struct Servable {
    pub name: String,
    vocab: Vocabulary,
    config: TowerConfig,
    query: QueryTowerParams,
    info: ModelInfo,
    index: EmbeddingIndex,
    pub defaults: RetrievalDefaults,
}

impl Servable {
    /// Assembles a servable, refusing inconsistent parts.
    pub fn new(
        name: impl Into<String>,
        vocab: Vocabulary,
        config: TowerConfig,
        query: QueryTowerParams,
        info: ModelInfo,
        index: EmbeddingIndex,
        defaults: RetrievalDefaults,
    ) -> Result<Self> {
        let found = vocab.hash();
        if found != info.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: info.vocab_hash,
                found,
            });
        }
        if vocab.len() != config.vocab_size {
            return Err(Error::Dimension {
                context: "vocabulary size vs checkpoint".into(),
                expected: config.vocab_size,
                found: vocab.len(),
            });
        }
        if index.dim() != config.dim {
            return Err(Error::Dimension {
                context: "index dimension vs checkpoint".into(),
                expected: config.dim,
                found: index.dim(),
            });
        }
        if !(defaults.fanout > 0.0) || defaults.k < 1 {
            return Err(Error::Config("k must be >= 1 and fanout > 0".into()));
        }
        Ok(Self {
            name: name.into(),
            vocab,
            config,
            query,
            info,
            index,
            defaults,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    pub fn config(&self) -> &TowerConfig {
        &self.config
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        self.vocab.encode(text)
    }

    pub fn heads(&self, text: &str, user_features: &[u32]) -> Result<QueryHeads> {
        self.query.forward(self.encode(text).ids(), user_features)
    }

    /// Text to at most `k` hits. Every head fetches its own candidates; an
    /// item found by several heads keeps its best score and that head.
    pub fn retrieve(&self, text: &str, user_features: &[u32], k: usize) -> Result<Retrieval> {
        if k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        let seq = self.encode(text);
        if seq.is_unknown() {
            warn!("query {text:?} has no known tokens");
            return Ok(Retrieval {
                hits: Vec::new(),
                warning: Some("query has no known tokens".into()),
            });
        }
        let heads = self.query.forward(seq.ids(), user_features)?;
        let per_head = ((k as f64) * self.defaults.fanout).ceil().max(1.0) as usize;
        let ef = self.defaults.ef_search.unwrap_or(self.index.params().ef_search);

        let mut best: Vec<(RawHit, usize)> = Vec::new();
        let mut slot: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
        for (h, head) in heads.iter().enumerate() {
            let q: Vec<f32> = head.iter().map(|&x| x as f32).collect();
            for hit in self.index.search_raw_with_beam(&q, per_head, ef)? {
                match slot.get(&hit.pos) {
                    Some(&i) => {
                        if hit.score > best[i].0.score {
                            best[i] = (hit, h);
                        }
                    }
                    None => {
                        slot.insert(hit.pos, best.len());
                        best.push((hit, h));
                    }
                }
            }
        }
        best.sort_by(|a, b| self.index.compare_hits(&a.0, &b.0));
        best.truncate(k);
        Ok(Retrieval {
            hits: best
                .into_iter()
                .map(|(hit, head)| Hit {
                    item_id: self.index.id(hit.pos).to_string(),
                    score: hit.score,
                    head,
                })
                .collect(),
            warning: None,
        })
    }
}

/// Loads and cross-checks checkpoint, index and vocabulary.
pub fn load_servable(
    name: &str,
    checkpoint_path: impl AsRef<Path>,
    index_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
    defaults: RetrievalDefaults,
) -> Result<Servable> {
    let (towers, meta) = checkpoint::load(checkpoint_path)?;
    let index = load_index(index_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    Servable::new(name, vocab, meta.config, towers.query, meta.info, index, defaults)
}

/// Unit-norm f32 embeddings for every item, ready for indexing.
pub fn item_vectors(tower: &ItemTowerParams, items: &[EncodedItem]) -> Result<Vec<(String, Vec<f32>)>> {
    let mut degenerate = 0;
    let out = items
        .iter()
        .map(|it| {
            let emb = tower.forward(&it.tokens, &[])?;
            degenerate += emb.degenerate as usize;
            Ok((it.id.clone(), emb.g.iter().map(|&x| x as f32).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    if degenerate > 0 {
        warn!("{degenerate} items had a degenerate embedding and use the fallback direction");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{dot_f32, IndexParams};
    use crate::towers::TwoTower;

    fn setup(heads: usize, n_items: usize) -> (Servable, TwoTower) {
        let texts: Vec<String> = (0..n_items).map(|i| format!("item{i} word{}", i % 7)).collect();
        let vocab = Vocabulary::build(texts.iter().chain(&["red apple".to_string()]), 1).unwrap();
        let config = TowerConfig {
            dim: 8,
            heads,
            agg_dim: 8,
            mlp_hidden: vec![16],
            vocab_size: vocab.len(),
        };
        let towers = TwoTower::init(config.clone(), 3).unwrap();
        let items: Vec<EncodedItem> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| EncodedItem {
                id: format!("id{i:03}"),
                tokens: vocab.encode(t).0,
            })
            .collect();
        let index = EmbeddingIndex::build(item_vectors(&towers.item, &items).unwrap(), IndexParams::default()).unwrap();
        let info = ModelInfo::new(vocab.hash(), 1.0);
        let s = Servable::new("m", vocab, config, towers.query.clone(), info, index, RetrievalDefaults::default())
            .unwrap();
        (s, towers)
    }

    #[test]
    fn single_head_equals_plain_search() {
        let (s, _) = setup(1, 50);
        let heads = s.heads("word3 apple", &[]).unwrap();
        let q: Vec<f32> = heads.head(0).iter().map(|&x| x as f32).collect();
        let plain = s.index().search(&q, 10).unwrap();
        let r = s.retrieve("word3 apple", &[], 10).unwrap();
        assert_eq!(r.hits.len(), 10);
        for (a, b) in r.hits.iter().zip(&plain) {
            assert_eq!(a.item_id, b.id);
            assert_eq!(a.score, b.score);
            assert_eq!(a.head, 0);
        }
    }

    #[test]
    fn multi_head_keeps_max_score() {
        let (s, _) = setup(3, 60);
        let heads = s.heads("red word1", &[]).unwrap();
        let r = s.retrieve("red word1", &[], 60).unwrap();
        assert_eq!(r.hits.len(), 60);
        let ids: std::collections::HashSet<&str> = r.hits.iter().map(|h| h.item_id.as_str()).collect();
        assert_eq!(ids.len(), 60);
        for hit in &r.hits {
            let pos = s.index().ids().iter().position(|i| i == &hit.item_id).unwrap() as u32;
            let scores: Vec<f32> = heads
                .iter()
                .map(|h| {
                    let q: Vec<f32> = h.iter().map(|&x| x as f32).collect();
                    dot_f32(&q, s.index().vector(pos))
                })
                .collect();
            let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            assert_eq!(hit.score, max);
            assert_eq!(scores[hit.head], max);
        }
        for w in r.hits.windows(2) {
            assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].item_id < w[1].item_id));
        }
    }

    #[test]
    fn unknown_query_warns() {
        let (s, _) = setup(2, 10);
        let r = s.retrieve("zzz qqq", &[], 5).unwrap();
        assert!(r.hits.is_empty());
        assert!(r.warning.is_some());
    }

    #[test]
    fn rejects_mismatched_parts() {
        let (s, towers) = setup(1, 10);
        let mut info = s.info().clone();
        info.vocab_hash = "0".repeat(64);
        let copy = || crate::index::from_bytes(&crate::index::to_bytes(s.index())).unwrap();
        let index = copy();
        let err = Servable::new(
            "m",
            s.vocab().clone(),
            s.config().clone(),
            towers.query.clone(),
            info,
            index,
            RetrievalDefaults::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::VocabMismatch { .. }));

        let mut config = s.config().clone();
        config.dim = 4;
        let small = TwoTower::init(config.clone(), 1).unwrap();
        let err = Servable::new(
            "m",
            s.vocab().clone(),
            config,
            small.query,
            s.info().clone(),
            copy(),
            RetrievalDefaults::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 4, found: 8, .. }));
    }
}
