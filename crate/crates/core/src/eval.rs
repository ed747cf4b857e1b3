//! Offline metrics: top-k hit rate among random distractors, AUC, mean
//! popularity of retrieved items, latency percentiles and embedding export.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::synthetic::cluster_map;
use crate::ingest::{encode_query, FeatureOptions, FeatureStore, Interaction};
use crate::tokenizer::Vocabulary;
use crate::servable::Servable;
use crate::towers::{ItemTowerParams, QueryHeads, QueryTowerParams, TwoTower};
use crate::training::scoring::score;
use crate::training::EncodedItem;

/// Rank of the relevant score among `distractors`, counting every
/// distractor that scores at least as high (ties go against the relevant).
pub fn pessimistic_rank(relevant: f64, distractors: &[f64]) -> usize {
    1 + distractors.iter().filter(|&&s| s >= relevant).count()
}

/// One top-k query: the relevant item and items that must not be drawn as
/// distractors (beyond the relevant one itself).
#[derive(Debug, Clone, PartialEq)]
pub struct TopKQuery {
    pub relevant: usize,
    /// Sorted item positions.
    pub exclude: Vec<usize>,
}

/// Hit rates at each `k` in `ks` with one shared sample of `n - 1`
/// distractors per query, drawn uniformly without replacement.
///
/// `score(q, item)` scores query `q` (an index into `queries`) against an
/// item position. Each query draws from its own seeded stream, so results
/// do not depend on evaluation order.
pub fn top_k_rates<F>(n_items: usize, queries: &[TopKQuery], ks: &[usize], n: usize, seed: u64, score: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> f64,
{
    if ks.iter().any(|&k| k < 1 || k > n) || n < 1 {
        return Err(Error::Config(format!("need 1 <= k <= N, got ks={ks:?} N={n}")));
    }
    if queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = vec![0usize; ks.len()];
    let mut allowed: Vec<usize> = Vec::with_capacity(n_items);
    for (qi, q) in queries.iter().enumerate() {
        allowed.clear();
        let mut ex = q.exclude.iter().peekable();
        for i in 0..n_items {
            while ex.next_if(|&&e| e < i).is_some() {}
            if i == q.relevant || ex.peek() == Some(&&i) {
                continue;
            }
            allowed.push(i);
        }
        if allowed.len() < n - 1 {
            return Err(Error::Config(format!(
                "query {qi}: only {} distractors available, need {}",
                allowed.len(),
                n - 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(qi as u64);
        let picks = rand::seq::index::sample(&mut rng, allowed.len(), n - 1);
        let rel = score(qi, q.relevant);
        let scores: Vec<f64> = picks.iter().map(|p| score(qi, allowed[p])).collect();
        let rank = pessimistic_rank(rel, &scores);
        for (h, &k) in hits.iter_mut().zip(ks) {
            *h += (rank <= k) as usize;
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / queries.len() as f64).collect())
}

pub fn top_k_rate<F>(n_items: usize, queries: &[TopKQuery], k: usize, n: usize, seed: u64, score: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    Ok(top_k_rates(n_items, queries, &[k], n, seed, score)?[0])
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half.
pub fn auc(scored: &[(f64, bool)]) -> Result<f64> {
    let positives = scored.iter().filter(|s| s.1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        // average 1-based rank of the tie group
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&o| scored[o].1).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Item embeddings in wide precision.
pub fn embed_items(tower: &ItemTowerParams, items: &[EncodedItem]) -> Result<Vec<Vec<f64>>> {
    items.iter().map(|it| Ok(tower.forward(&it.tokens, &[])?.g)).collect()
}

/// Query heads for (query tokens, profile ids) pairs.
pub fn embed_queries(tower: &QueryTowerParams, queries: &[(Vec<u32>, Vec<u32>)]) -> Result<Vec<QueryHeads>> {
    queries.iter().map(|(q, p)| tower.forward(q, p)).collect()
}

/// Soft-dot-product scorer over precomputed embeddings.
pub fn model_scorer<'a>(heads: &'a [QueryHeads], items: &'a [Vec<f64>], beta: f64) -> impl Fn(usize, usize) -> f64 + 'a {
    move |q, i| score(&heads[q], &items[i], beta)
}

/// Mean over queries of the mean popularity of each query's top-k hits.
/// Queries with no hits are left out.
pub fn mean_retrieved_popularity<S: AsRef<str>>(
    servable: &Servable,
    queries: &[S],
    popularity: &HashMap<String, f64>,
    k: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for q in queries {
        let r = servable.retrieve(q.as_ref(), &[], k)?;
        if r.hits.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for h in &r.hits {
            sum += popularity
                .get(&h.item_id)
                .ok_or_else(|| Error::Config(format!("no popularity for item {:?}", h.item_id)))?;
        }
        total += sum / r.hits.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(total / counted as f64)
}

/// Cluster membership of items and queries, as emitted by the synthetic
/// generator.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub items: HashMap<String, Vec<usize>>,
    pub queries: HashMap<String, Vec<usize>>,
}

impl GroundTruth {
    pub fn new(item_rows: &[(String, usize)], query_rows: &[(String, usize)]) -> Self {
        Self {
            items: cluster_map(item_rows),
            queries: cluster_map(query_rows),
        }
    }

    /// True when the item shares a cluster with the query.
    pub fn relevant(&self, query: &str, item: &str) -> bool {
        match (self.queries.get(query), self.items.get(item)) {
            (Some(q), Some(i)) => q.iter().any(|c| i.contains(c)),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutQuality {
    pub queries: usize,
    pub top1: f64,
    pub top10: f64,
    pub auc: f64,
}

/// Top-1/top-10 among `n` random distractors and AUC for held-out clicks.
///
/// Every held-out row is one query with its clicked item as the relevant
/// one. Items that share a cluster with the query are never drawn as
/// distractors or AUC negatives: they are relevant too. Each AUC negative is
/// one such non-relevant item drawn per query. Rows whose query or item is
/// unknown to the ground truth or the item list are skipped.
#[allow(clippy::too_many_arguments)]
pub fn heldout_quality(
    towers: &TwoTower,
    beta: f64,
    vocab: &Vocabulary,
    store: &FeatureStore,
    items: &[EncodedItem],
    heldout: &[Interaction],
    truth: &GroundTruth,
    opts: FeatureOptions,
    n: usize,
    seed: u64,
) -> Result<HeldoutQuality> {
    let position: HashMap<&str, usize> = items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    let item_clusters: Vec<Option<&Vec<usize>>> = items.iter().map(|it| truth.items.get(&it.id)).collect();
    let mut encoded = Vec::new();
    let mut queries = Vec::new();
    for row in heldout {
        let (Some(&relevant), Some(clusters)) = (position.get(row.item_id.as_str()), truth.queries.get(&row.query)) else {
            continue;
        };
        let exclude: Vec<usize> = (0..items.len())
            .filter(|&i| item_clusters[i].is_some_and(|ic| clusters.iter().any(|c| ic.contains(c))))
            .collect();
        encoded.push((encode_query(vocab, &row.query, store.user(&row.user_id), opts), Vec::new()));
        queries.push(TopKQuery { relevant, exclude });
    }
    if queries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let item_emb = embed_items(&towers.item, items)?;
    let heads = embed_queries(&towers.query, &encoded)?;
    let scorer = model_scorer(&heads, &item_emb, beta);
    let rates = top_k_rates(items.len(), &queries, &[1, 10], n, seed, &scorer)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut labeled = Vec::with_capacity(queries.len() * 2);
    for (qi, q) in queries.iter().enumerate() {
        labeled.push((scorer(qi, q.relevant), true));
        let free = items.len() - q.exclude.len();
        if free == 0 {
            continue;
        }
        let mut pick = rng.random_range(0..free);
        // map the pick onto the complement of the sorted exclusion list
        for &e in &q.exclude {
            if e <= pick {
                pick += 1;
            } else {
                break;
            }
        }
        labeled.push((scorer(qi, pick), false));
    }
    Ok(HeldoutQuality {
        queries: queries.len(),
        top1: rates[0],
        top10: rates[1],
        auc: auc(&labeled)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl LatencySummary {
    pub fn from_ms(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            count: s.len(),
            p50_ms: percentile(&s, 50.0),
            p99_ms: percentile(&s, 99.0),
            mean_ms: if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 },
            max_ms: s.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub top1: Option<f64>,
    pub top10: Option<f64>,
    pub auc: Option<f64>,
    pub mean_retrieved_popularity: Option<f64>,
    pub latency_p50_ms: Option<f64>,
    pub latency_p99_ms: Option<f64>,
    pub qps: Option<f64>,
}

impl MetricReport {
    /// `name=value` pairs joined by TAB; missing values print as `-`.
    pub fn summary_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        [
            format!("queries={}", self.queries),
            format!("top1={}", f(self.top1)),
            format!("top10={}", f(self.top10)),
            format!("auc={}", f(self.auc)),
            format!("mean_retrieved_popularity={}", f(self.mean_retrieved_popularity)),
            format!("latency_p50_ms={}", f(self.latency_p50_ms)),
            format!("latency_p99_ms={}", f(self.latency_p99_ms)),
            format!("qps={}", f(self.qps)),
        ]
        .join("\t")
    }
}

fn write_floats<W: Write>(out: &mut W, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        write!(out, "\t{v:.5e}")?;
    }
    writeln!(out)?;
    Ok(())
}

/// One row per item: `id` then `d` floats. Returns the row count.
pub fn export_items<W: Write>(tower: &ItemTowerParams, items: &[EncodedItem], out: &mut W) -> Result<usize> {
    let dim = tower.mlp.output_dim();
    write!(out, "id")?;
    for i in 0..dim {
        write!(out, "\tv{i}")?;
    }
    writeln!(out)?;
    for it in items {
        let emb = tower.forward(&it.tokens, &[])?;
        write!(out, "{}", it.id)?;
        write_floats(out, emb.g)?;
    }
    Ok(items.len())
}

/// One row per (query, head): `id`, `head`, then `d` floats.
pub fn export_queries<W: Write>(tower: &QueryTowerParams, queries: &[(String, Vec<u32>)], out: &mut W) -> Result<usize> {
    let dim = tower.head_mlps.first().map_or(0, |m| m.output_dim());
    write!(out, "id\thead")?;
    for i in 0..dim {
        write!(out, "\tv{i}")?;
    }
    writeln!(out)?;
    let mut rows = 0;
    for (text, seq) in queries {
        let heads = tower.forward(seq, &[])?;
        for (h, v) in heads.iter().enumerate() {
            write!(out, "{text}\t{h}")?;
            write_floats(out, v.iter().copied())?;
            rows += 1;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub id: String,
    pub head: Option<usize>,
    pub values: Vec<f64>,
}

/// Parses either export format.
pub fn read_export<R: BufRead>(input: R) -> Result<Vec<ExportRow>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let has_head = header.split('\t').nth(1) == Some("head");
    let bad = |line: usize, msg: String| Error::Parse {
        path: "<export>".into(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_string();
        let head = if has_head {
            let h = fields.next().unwrap_or_default();
            Some(h.parse().map_err(|_| bad(n + 2, format!("bad head {h:?}")))?)
        } else {
            None
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(n + 2, format!("bad float {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ExportRow { id, head, values });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn queries(n: usize, n_items: usize) -> Vec<TopKQuery> {
        (0..n)
            .map(|i| TopKQuery {
                relevant: i % n_items,
                exclude: Vec::new(),
            })
            .collect()
    }

    #[test]
    fn oracle_scorer_is_perfect() {
        let qs = queries(50, 2000);
        let r = top_k_rate(2000, &qs, 1, 1024, 0, |q, i| if i == qs[q].relevant { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn all_ties_rank_last() {
        let qs = queries(20, 2000);
        let r = top_k_rates(2000, &qs, &[1, 10, 1023, 1024], 1024, 0, |_, _| 0.5).unwrap();
        assert_eq!(r, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn random_scorer_matches_expectation() {
        // hash-like scores independent of the sampler
        let score = |q: usize, i: usize| {
            let x = (q as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
            let x = (x ^ (x >> 29)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            (x ^ (x >> 32)) as f64
        };
        let qs = queries(10_000, 3000);
        let r = top_k_rate(3000, &qs, 10, 1024, 7, score).unwrap();
        assert!((r - 10.0 / 1024.0).abs() < 0.002, "{r}");
    }

    #[test]
    fn exclusions_are_never_drawn() {
        let qs = vec![TopKQuery {
            relevant: 0,
            exclude: (1..10).collect(),
        }];
        // excluded items would outrank the relevant one
        let r = top_k_rate(20, &qs, 1, 11, 0, |_, i| if (1..10).contains(&i) { 9.0 } else { -(i as f64) }).unwrap();
        assert_eq!(r, 1.0);
        assert!(top_k_rate(20, &qs, 1, 12, 0, |_, _| 0.0).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[(0.9, true), (0.8, true), (0.1, false)]).unwrap(), 1.0);
        assert_eq!(auc(&[(0.1, true), (0.9, false)]).unwrap(), 0.0);
        assert_eq!(auc(&[(0.5, true), (0.5, false), (0.5, true), (0.5, false)]).unwrap(), 0.5);
        assert_eq!(auc(&[(0.7, true), (0.7, false), (0.2, false)]).unwrap(), 0.75);
        assert!(matches!(
            auc(&[(1.0, true)]),
            Err(Error::SingleClass { positives: 1, negatives: 0 })
        ));
    }

    #[test]
    fn random_auc_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(f64, bool)> = (0..10_000).map(|_| (rng.random::<f64>(), rng.random_bool(0.5))).collect();
        let a = auc(&pairs).unwrap();
        assert!((a - 0.5).abs() < 0.02, "{a}");
    }

    #[test]
    fn percentiles() {
        let s: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        assert_eq!(percentile(&s, 50.0), 50.0);
        assert_eq!(percentile(&s, 99.0), 99.0);
        assert_eq!(percentile(&s, 100.0), 100.0);
        let l = LatencySummary::from_ms(&[3.0, 1.0, 2.0]);
        assert_eq!((l.p50_ms, l.max_ms, l.count), (2.0, 3.0, 3));
    }

    #[test]
    fn summary_line_format() {
        let r = MetricReport {
            queries: 3,
            top10: Some(0.5),
            ..Default::default()
        };
        let line = r.summary_line();
        assert!(line.starts_with("queries=3\ttop1=-\ttop10=0.500000\t"));
        assert_eq!(line.split('\t').count(), 8);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            scores in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..60)
        ) {
            prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
            let a = auc(&scores).unwrap();
            let t: Vec<(f64, bool)> = scores.iter().map(|&(s, l)| (s.exp() * 3.0 + 1.0, l)).collect();
            prop_assert!((a - auc(&t).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn top_k_monotone_in_k(seed in 0u64..1000) {
            let qs = queries(30, 200);
            let score = |q: usize, i: usize| ((q * 31 + i * 17 + seed as usize) % 97) as f64;
            let r = top_k_rates(200, &qs, &[1, 5, 10, 50, 100], 100, seed, score).unwrap();
            for w in r.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }
    }
}
