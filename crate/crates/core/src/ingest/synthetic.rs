//! Latent-cluster click-log generator.
//!
//! Every cluster owns a small set of made-up words. Item titles and queries
//! are drawn from their cluster's words, each word independently replaced by
//! a random word from any cluster with probability `noise`. A click picks a
//! cluster, then one of its queries, then one of its items with weight
//! `rank^-skew` over a random per-cluster ranking.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    write_interactions, write_items, write_truth, write_users, Interaction, ItemRecord, Label, UserRecord,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub items_per_cluster: usize,
    pub queries_per_cluster: usize,
    /// Distinct words owned by each cluster.
    pub words_per_cluster: usize,
    pub title_words: usize,
    pub users: usize,
    /// Training clicks.
    pub clicks: usize,
    /// Held-out clicks, drawn from the same process.
    pub heldout: usize,
    /// Probability that a word is replaced by a random word.
    pub noise: f64,
    /// Power-law exponent of within-cluster item popularity.
    pub skew: f64,
    /// Pairs of clusters `(2p, 2p+1)` sharing one ambiguous query word.
    pub polysemous_pairs: usize,
    /// Fraction of a paired cluster's clicks that come from its ambiguous query.
    pub ambiguous_share: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            clusters: 50,
            items_per_cluster: 40,
            queries_per_cluster: 20,
            words_per_cluster: 12,
            title_words: 4,
            users: 200,
            clicks: 100_000,
            heldout: 2_000,
            noise: 0.1,
            skew: 1.0,
            polysemous_pairs: 0,
            ambiguous_share: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.clusters < 2 {
            return bad("clusters must be >= 2");
        }
        if self.items_per_cluster < 1 || self.queries_per_cluster < 1 {
            return bad("items_per_cluster and queries_per_cluster must be >= 1");
        }
        if self.words_per_cluster < 3 || self.title_words < 1 {
            return bad("words_per_cluster must be >= 3 and title_words >= 1");
        }
        if self.users < 1 {
            return bad("users must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must be in [0, 1]");
        }
        if !(self.skew >= 0.0) {
            return bad("skew must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.ambiguous_share) {
            return bad("ambiguous_share must be in [0, 1]");
        }
        if 2 * self.polysemous_pairs > self.clusters {
            return bad("polysemous_pairs must be <= clusters / 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub users: Vec<UserRecord>,
    pub items: Vec<ItemRecord>,
    pub interactions: Vec<Interaction>,
    pub heldout: Vec<Interaction>,
    /// (item id, cluster), in item order.
    pub item_clusters: Vec<(String, usize)>,
    /// (query, cluster); an ambiguous query appears once per cluster.
    pub query_clusters: Vec<(String, usize)>,
}

pub const SYNTHETIC_FILES: [&str; 6] = [
    "users.tsv",
    "items.tsv",
    "interactions.tsv",
    "heldout.tsv",
    "item_clusters.tsv",
    "query_clusters.tsv",
];

impl SyntheticCorpus {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let d = dir.as_ref();
        std::fs::create_dir_all(d)?;
        write_users(d.join(SYNTHETIC_FILES[0]), &self.users)?;
        write_items(d.join(SYNTHETIC_FILES[1]), &self.items)?;
        write_interactions(d.join(SYNTHETIC_FILES[2]), &self.interactions)?;
        write_interactions(d.join(SYNTHETIC_FILES[3]), &self.heldout)?;
        write_truth(d.join(SYNTHETIC_FILES[4]), &self.item_clusters)?;
        write_truth(d.join(SYNTHETIC_FILES[5]), &self.query_clusters)?;
        Ok(())
    }

    /// Clusters of each query.
    pub fn query_cluster_map(&self) -> HashMap<String, Vec<usize>> {
        cluster_map(&self.query_clusters)
    }

    /// Queries that belong to more than one cluster.
    pub fn ambiguous_queries(&self) -> Vec<String> {
        let map = self.query_cluster_map();
        let mut out: Vec<String> = map.into_iter().filter(|(_, c)| c.len() > 1).map(|(q, _)| q).collect();
        out.sort();
        out
    }
}

/// Groups `(id, cluster)` rows by id.
pub fn cluster_map(rows: &[(String, usize)]) -> HashMap<String, Vec<usize>> {
    let mut map: HashMap<String, Vec<usize>> = HashMap::new();
    for (id, c) in rows {
        map.entry(id.clone()).or_default().push(*c);
    }
    map
}

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn fresh_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*CONSONANTS.choose(rng).unwrap() as char);
            w.push(*VOWELS.choose(rng).unwrap() as char);
        }
        if rng.random_bool(0.5) {
            w.push(*CONSONANTS.choose(rng).unwrap() as char);
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// Relative click weight of the item at 0-based popularity rank `rank`.
pub fn popularity_weight(rank: usize, skew: f64) -> f64 {
    ((rank + 1) as f64).powf(-skew)
}

struct Cluster {
    words: Vec<String>,
    /// Positions into the global item list.
    items: Vec<usize>,
    cumulative: Vec<f64>,
    /// Positions into the global query list.
    queries: Vec<usize>,
    ambiguous: Option<usize>,
}

impl Cluster {
    fn draw_item(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.items[i.min(self.items.len() - 1)]
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used = HashSet::new();
    let mut clusters: Vec<Cluster> = (0..spec.clusters)
        .map(|_| Cluster {
            words: (0..spec.words_per_cluster).map(|_| fresh_word(&mut rng, &mut used)).collect(),
            items: Vec::new(),
            cumulative: Vec::new(),
            queries: Vec::new(),
            ambiguous: None,
        })
        .collect();
    let all_words: Vec<String> = clusters.iter().flat_map(|c| c.words.clone()).collect();
    let ambiguous: Vec<String> = (0..spec.polysemous_pairs)
        .map(|_| fresh_word(&mut rng, &mut used))
        .collect();

    let noisy = |w: &String, rng: &mut ChaCha8Rng| -> String {
        if spec.noise > 0.0 && rng.random_bool(spec.noise) {
            all_words.choose(rng).unwrap().clone()
        } else {
            w.clone()
        }
    };

    let mut items = Vec::new();
    let mut item_clusters = Vec::new();
    for (c, cl) in clusters.iter_mut().enumerate() {
        for _ in 0..spec.items_per_cluster {
            let mut words: Vec<String> = cl
                .words
                .choose_multiple(&mut rng, spec.title_words.min(cl.words.len()))
                .map(|w| noisy(w, &mut rng))
                .collect();
            if c < 2 * spec.polysemous_pairs && rng.random_bool(0.5) {
                words[0] = ambiguous[c / 2].clone();
            }
            let id = format!("item{:06}", items.len());
            cl.items.push(items.len());
            item_clusters.push((id.clone(), c));
            items.push(ItemRecord {
                id,
                title: words.join(" "),
                category: format!("cat{}", c / 5),
                popularity: 0,
            });
        }
        let mut ranks: Vec<usize> = (0..cl.items.len()).collect();
        ranks.shuffle(&mut rng);
        let mut acc = 0.0;
        cl.cumulative = ranks
            .iter()
            .map(|&r| {
                acc += popularity_weight(r, spec.skew);
                acc
            })
            .collect();
    }

    let mut queries: Vec<String> = Vec::new();
    let mut query_clusters = Vec::new();
    let mut seen_queries = HashSet::new();
    for (c, cl) in clusters.iter_mut().enumerate() {
        let mut made = 0;
        let mut attempts = 0;
        while made < spec.queries_per_cluster && attempts < 1000 * spec.queries_per_cluster {
            attempts += 1;
            let n = rng.random_range(2..=3);
            let q: Vec<String> = cl
                .words
                .choose_multiple(&mut rng, n)
                .map(|w| noisy(w, &mut rng))
                .collect();
            let q = q.join(" ");
            if !seen_queries.insert(q.clone()) {
                continue;
            }
            cl.queries.push(queries.len());
            query_clusters.push((q.clone(), c));
            queries.push(q);
            made += 1;
        }
    }
    for (p, word) in ambiguous.iter().enumerate() {
        for c in [2 * p, 2 * p + 1] {
            clusters[c].ambiguous = Some(queries.len());
            query_clusters.push((word.clone(), c));
        }
        queries.push(word.clone());
    }

    let users: Vec<UserRecord> = (0..spec.users)
        .map(|u| UserRecord {
            id: format!("user{u:05}"),
            gender: ["f", "m", "u"].choose(&mut rng).unwrap().to_string(),
            power: rng.random_range(1..=5u32).to_string(),
            locale: ["en", "de", "fr", "zh"].choose(&mut rng).unwrap().to_string(),
            history: (0..rng.random_range(0..=3))
                .map(|_| items[rng.random_range(0..items.len())].id.clone())
                .collect(),
        })
        .collect();

    let click = |rng: &mut ChaCha8Rng| -> Interaction {
        let cl = &clusters[rng.random_range(0..clusters.len())];
        let q = match cl.ambiguous {
            Some(q) if rng.random_bool(spec.ambiguous_share) => q,
            _ => *cl.queries.choose(rng).unwrap(),
        };
        let item = cl.draw_item(rng);
        Interaction {
            query: queries[q].clone(),
            user_id: users[rng.random_range(0..users.len())].id.clone(),
            item_id: items[item].id.clone(),
            label: Label::Click,
        }
    };
    let interactions: Vec<Interaction> = (0..spec.clicks).map(|_| click(&mut rng)).collect();
    let heldout: Vec<Interaction> = (0..spec.heldout).map(|_| click(&mut rng)).collect();

    let position: HashMap<&str, usize> = items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
    let mut counts = vec![0u64; items.len()];
    for it in &interactions {
        counts[position[it.item_id.as_str()]] += 1;
    }
    for (item, n) in items.iter_mut().zip(counts) {
        item.popularity = n;
    }

    Ok(SyntheticCorpus {
        users,
        items,
        interactions,
        heldout,
        item_clusters,
        query_clusters,
    })
}
