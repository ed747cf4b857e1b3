//! Three-file training data (users, items, interactions), human supervision
//! and the synthetic click-log generator.
//!
//! Feature files are loaded into memory first; interactions are streamed and
//! joined against them one row at a time.

pub mod synthetic;
pub mod tsv;

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{feature_token, Vocabulary};
use crate::training::{EncodedItem, EncodedPair, TrainCorpus};
pub use synthetic::{generate_synthetic, SyntheticCorpus, SyntheticSpec};
use tsv::{write_row, TsvReader};

pub const USERS_HEADER: [&str; 5] = ["user_id", "gender", "power", "locale", "history"];
pub const ITEMS_HEADER: [&str; 4] = ["item_id", "title", "category", "popularity"];
pub const INTERACTIONS_HEADER: [&str; 4] = ["query", "user_id", "item_id", "label"];
pub const TRUTH_HEADER: [&str; 2] = ["id", "cluster"];
pub const DENORMALIZED_HEADER: [&str; 11] = [
    "query",
    "label",
    "user_id",
    "gender",
    "power",
    "locale",
    "history",
    "item_id",
    "title",
    "category",
    "popularity",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub id: String,
    pub gender: String,
    pub power: String,
    pub locale: String,
    pub history: Vec<String>,
}

impl UserRecord {
    /// Vocabulary keys of this user's profile and history.
    pub fn feature_keys(&self) -> Vec<String> {
        let mut keys = vec![
            feature_token("gender", &self.gender),
            feature_token("power", &self.power),
            feature_token("locale", &self.locale),
        ];
        keys.extend(self.history.iter().map(|h| feature_token("hist", h)));
        keys
    }

    fn to_row(&self) -> [String; 5] {
        [
            self.id.clone(),
            self.gender.clone(),
            self.power.clone(),
            self.locale.clone(),
            self.history.join(","),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRecord {
    pub id: String,
    pub title: String,
    pub category: String,
    /// Raw click count.
    pub popularity: u64,
}

/// `floor(log2(popularity + 1))`.
pub fn popularity_bucket(popularity: u64) -> u32 {
    63 - popularity.saturating_add(1).leading_zeros()
}

impl ItemRecord {
    pub fn popularity_bucket(&self) -> u32 {
        popularity_bucket(self.popularity)
    }

    pub fn feature_keys(&self) -> Vec<String> {
        vec![
            feature_token("cat", &self.category),
            feature_token("pop", &self.popularity_bucket().to_string()),
        ]
    }

    fn to_row(&self) -> [String; 4] {
        [
            self.id.clone(),
            self.title.clone(),
            self.category.clone(),
            self.popularity.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Click,
    Skip,
    HumanPos,
    HumanNeg,
}

impl Label {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "click" => Ok(Self::Click),
            "skip" => Ok(Self::Skip),
            "human_pos" => Ok(Self::HumanPos),
            "human_neg" => Ok(Self::HumanNeg),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Click => "click",
            Self::Skip => "skip",
            Self::HumanPos => "human_pos",
            Self::HumanNeg => "human_neg",
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Self::Click | Self::HumanPos)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub query: String,
    pub user_id: String,
    pub item_id: String,
    pub label: Label,
}

impl Interaction {
    fn from_row(row: Vec<String>) -> Result<Self> {
        let [query, user_id, item_id, label]: [String; 4] = row.try_into().expect("width checked");
        Ok(Self {
            query,
            user_id,
            item_id,
            label: Label::parse(&label)?,
        })
    }
}

fn at_line<T>(r: &TsvReader, res: Result<T>) -> Result<T> {
    res.map_err(|e| match e {
        Error::UnknownLabel(l) => r.error(format!("unknown label {l:?}")),
        other => other,
    })
}

pub fn read_users(path: impl AsRef<Path>) -> Result<Vec<UserRecord>> {
    let mut r = TsvReader::open(path, &USERS_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while let Some(row) = r.next_row()? {
        let [id, gender, power, locale, history]: [String; 5] = row.try_into().expect("width checked");
        if !seen.insert(id.clone()) {
            return Err(r.error(format!("duplicate user id {id:?}")));
        }
        let history = history
            .split(',')
            .filter(|h| !h.is_empty())
            .map(str::to_string)
            .collect();
        out.push(UserRecord {
            id,
            gender,
            power,
            locale,
            history,
        });
    }
    Ok(out)
}

pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<ItemRecord>> {
    let mut r = TsvReader::open(path, &ITEMS_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while let Some(row) = r.next_row()? {
        let [id, title, category, popularity]: [String; 4] = row.try_into().expect("width checked");
        if !seen.insert(id.clone()) {
            return Err(r.error(format!("duplicate item id {id:?}")));
        }
        let popularity = popularity
            .parse()
            .map_err(|_| r.error(format!("bad popularity {popularity:?}")))?;
        out.push(ItemRecord {
            id,
            title,
            category,
            popularity,
        });
    }
    Ok(out)
}

pub fn read_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>> {
    let mut r = TsvReader::open(path, &INTERACTIONS_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = r.next_row()? {
        out.push(at_line(&r, Interaction::from_row(row))?);
    }
    Ok(out)
}

/// `id<TAB>cluster` rows. An id may appear more than once.
pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let mut r = TsvReader::open(path, &TRUTH_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = r.next_row()? {
        let cluster = row[1]
            .parse()
            .map_err(|_| r.error(format!("bad cluster {:?}", row[1])))?;
        out.push((row[0].clone(), cluster));
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_users(path: impl AsRef<Path>, users: &[UserRecord]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_row(&mut w, &USERS_HEADER)?;
    for u in users {
        write_row(&mut w, &u.to_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_items(path: impl AsRef<Path>, items: &[ItemRecord]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_row(&mut w, &ITEMS_HEADER)?;
    for i in items {
        write_row(&mut w, &i.to_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_interactions(path: impl AsRef<Path>, rows: &[Interaction]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_row(&mut w, &INTERACTIONS_HEADER)?;
    for i in rows {
        write_row(&mut w, &[i.query.as_str(), &i.user_id, &i.item_id, i.label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth(path: impl AsRef<Path>, rows: &[(String, usize)]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_row(&mut w, &TRUTH_HEADER)?;
    for (id, c) in rows {
        write_row(&mut w, &[id.clone(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// In-memory user and item dictionaries.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    users: Vec<UserRecord>,
    user_index: HashMap<String, usize>,
    items: Vec<ItemRecord>,
    item_index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(users: Vec<UserRecord>, items: Vec<ItemRecord>) -> Result<Self> {
        let mut user_index = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if user_index.insert(u.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(u.id.clone()));
            }
        }
        let mut item_index = HashMap::with_capacity(items.len());
        for (i, it) in items.iter().enumerate() {
            if item_index.insert(it.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(it.id.clone()));
            }
        }
        Ok(Self {
            users,
            user_index,
            items,
            item_index,
        })
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.items
    }

    pub fn user(&self, id: &str) -> Option<&UserRecord> {
        self.user_index.get(id).map(|&i| &self.users[i])
    }

    pub fn item_position(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn item(&self, id: &str) -> Option<&ItemRecord> {
        self.item_position(id).map(|i| &self.items[i])
    }
}

/// What to do with an interaction whose user or item is unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum DanglingPolicy {
    /// Drop the row and count it.
    #[default]
    Skip,
    /// Fail on the first dangling row.
    Strict,
}

/// An interaction with its user and item records attached.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedExample<'a> {
    pub query: String,
    pub label: Label,
    pub user: &'a UserRecord,
    pub item: &'a ItemRecord,
    /// Position of `item` in the item file.
    pub item_pos: usize,
}

impl JoinedExample<'_> {
    pub fn denormalized_row(&self) -> [String; 11] {
        let [user_id, gender, power, locale, history] = self.user.to_row();
        let [item_id, title, category, popularity] = self.item.to_row();
        [
            self.query.clone(),
            self.label.as_str().to_string(),
            user_id,
            gender,
            power,
            locale,
            history,
            item_id,
            title,
            category,
            popularity,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub store: FeatureStore,
    users_path: PathBuf,
    items_path: PathBuf,
    interactions_path: PathBuf,
    pub policy: DanglingPolicy,
}

impl Dataset {
    pub fn open(
        users: impl AsRef<Path>,
        items: impl AsRef<Path>,
        interactions: impl AsRef<Path>,
        policy: DanglingPolicy,
    ) -> Result<Self> {
        let store = FeatureStore::new(read_users(&users)?, read_items(&items)?)?;
        // fail early on a missing or malformed header
        TsvReader::open(&interactions, &INTERACTIONS_HEADER)?;
        Ok(Self {
            store,
            users_path: users.as_ref().to_path_buf(),
            items_path: items.as_ref().to_path_buf(),
            interactions_path: interactions.as_ref().to_path_buf(),
            policy,
        })
    }

    /// Opens `users.tsv`, `items.tsv` and `interactions.tsv` in `dir`.
    pub fn open_dir(dir: impl AsRef<Path>, policy: DanglingPolicy) -> Result<Self> {
        let d = dir.as_ref();
        Self::open(d.join("users.tsv"), d.join("items.tsv"), d.join("interactions.tsv"), policy)
    }

    pub fn interactions_path(&self) -> &Path {
        &self.interactions_path
    }

    /// Streams the interactions with features joined.
    pub fn examples(&self) -> Result<Examples<'_>> {
        Ok(Examples {
            store: &self.store,
            reader: TsvReader::open(&self.interactions_path, &INTERACTIONS_HEADER)?,
            policy: self.policy,
            skipped: 0,
        })
    }

    /// Writes the fully denormalized single-file form; returns the row count.
    pub fn write_denormalized<W: Write>(&self, out: &mut W) -> Result<usize> {
        write_row(out, &DENORMALIZED_HEADER)?;
        let mut rows = 0;
        for ex in self.examples()? {
            write_row(out, &ex?.denormalized_row())?;
            rows += 1;
        }
        Ok(rows)
    }

    /// Sizes of the three-file form and of the denormalized form.
    pub fn storage_report(&self) -> Result<StorageReport> {
        let three_file_bytes = [&self.users_path, &self.items_path, &self.interactions_path]
            .iter()
            .map(|p| fs::metadata(p).map(|m| m.len()))
            .sum::<io::Result<u64>>()?;
        let mut counter = ByteCounter(0);
        let rows = self.write_denormalized(&mut counter)?;
        Ok(StorageReport {
            rows,
            three_file_bytes,
            denormalized_bytes: counter.0,
        })
    }
}

struct ByteCounter(u64);

impl Write for ByteCounter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub rows: usize,
    pub three_file_bytes: u64,
    pub denormalized_bytes: u64,
}

impl StorageReport {
    /// Three-file size as a fraction of the denormalized size.
    pub fn ratio(&self) -> f64 {
        self.three_file_bytes as f64 / self.denormalized_bytes.max(1) as f64
    }
}

pub struct Examples<'a> {
    store: &'a FeatureStore,
    reader: TsvReader,
    policy: DanglingPolicy,
    skipped: usize,
}

impl Examples<'_> {
    /// Rows dropped so far for dangling references.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<'a> Iterator for Examples<'a> {
    type Item = Result<JoinedExample<'a>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let row = match self.reader.next_row() {
                Ok(Some(row)) => row,
                Ok(None) => return None,
                Err(e) => return Some(Err(e)),
            };
            let it = match at_line(&self.reader, Interaction::from_row(row)) {
                Ok(it) => it,
                Err(e) => return Some(Err(e)),
            };
            let user = self.store.user(&it.user_id);
            let item_pos = self.store.item_position(&it.item_id);
            match (user, item_pos) {
                (Some(user), Some(item_pos)) => {
                    return Some(Ok(JoinedExample {
                        query: it.query,
                        label: it.label,
                        user,
                        item: &self.store.items[item_pos],
                        item_pos,
                    }))
                }
                (u, _) => {
                    let (kind, id) = if u.is_none() {
                        ("user", it.user_id)
                    } else {
                        ("item", it.item_id)
                    };
                    if self.policy == DanglingPolicy::Strict {
                        return Some(Err(Error::Dangling { kind, id }));
                    }
                    self.skipped += 1;
                }
            }
        }
    }
}

/// Human labels: extra positive pairs and extra negatives per query.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Supervision {
    /// (query, item id), deduplicated, in file order.
    pub positives: Vec<(String, String)>,
    /// (query, item id) from `human_neg` and `skip` rows.
    pub negatives: Vec<(String, String)>,
    /// Positive rows dropped as exact repeats.
    pub duplicate_positives: usize,
}

pub fn load_supervision(path: impl AsRef<Path>) -> Result<Supervision> {
    let mut r = TsvReader::open(path, &INTERACTIONS_HEADER)?;
    let mut out = Supervision::default();
    let mut seen = HashSet::new();
    while let Some(row) = r.next_row()? {
        let it = at_line(&r, Interaction::from_row(row))?;
        match it.label {
            Label::HumanPos => {
                if seen.insert((it.query.clone(), it.item_id.clone())) {
                    out.positives.push((it.query, it.item_id));
                } else {
                    out.duplicate_positives += 1;
                }
            }
            Label::HumanNeg | Label::Skip => out.negatives.push((it.query, it.item_id)),
            Label::Click => return Err(r.error("label \"click\" is not allowed in supervision files")),
        }
    }
    if out.duplicate_positives > 0 {
        warn!("{} duplicate supervision positives dropped", out.duplicate_positives);
    }
    Ok(out)
}

/// Which structured features are appended to the text tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub user_features: bool,
    pub item_features: bool,
}

/// Item tower input: title tokens, then item feature ids when enabled.
pub fn encode_item(vocab: &Vocabulary, item: &ItemRecord, opts: FeatureOptions) -> Vec<u32> {
    let mut seq = vocab.encode(&item.title);
    if opts.item_features {
        seq.extend_ids(vocab.feature_ids(&item.feature_keys()));
    }
    seq.0
}

/// Query tower input: query tokens, then user feature ids when enabled.
pub fn encode_query(vocab: &Vocabulary, query: &str, user: Option<&UserRecord>, opts: FeatureOptions) -> Vec<u32> {
    let mut seq = vocab.encode(query);
    if let (true, Some(u)) = (opts.user_features, user) {
        seq.extend_ids(vocab.feature_ids(&u.feature_keys()));
    }
    seq.0
}

/// Text and feature keys a vocabulary should be built from.
pub fn vocabulary_inputs(dataset: &Dataset) -> Result<(Vec<String>, Vec<String>)> {
    let mut texts: Vec<String> = dataset.store.items().iter().map(|i| i.title.clone()).collect();
    for ex in dataset.examples()? {
        texts.push(ex?.query);
    }
    let mut features: Vec<String> = Vec::new();
    for u in dataset.store.users() {
        features.extend(u.feature_keys());
    }
    for i in dataset.store.items() {
        features.extend(i.feature_keys());
    }
    Ok((texts, features))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub interactions: usize,
    pub positives: usize,
    pub negatives: usize,
    pub dangling_skipped: usize,
    pub supervision_positives: usize,
    pub supervision_negatives: usize,
}

/// Encodes every item and turns positive interactions (plus supervision
/// positives) into training pairs. Negative rows become per-query labeled
/// negatives attached to every pair with the same query text.
pub fn build_train_corpus(
    dataset: &Dataset,
    vocab: &Vocabulary,
    supervision: Option<&Supervision>,
    opts: FeatureOptions,
) -> Result<(TrainCorpus, CorpusStats)> {
    let store = &dataset.store;
    let items: Vec<EncodedItem> = store
        .items()
        .iter()
        .map(|it| EncodedItem {
            id: it.id.clone(),
            tokens: encode_item(vocab, it, opts),
        })
        .collect();
    let mut stats = CorpusStats::default();
    let mut pairs: Vec<(String, EncodedPair)> = Vec::new();
    let mut negatives: HashMap<String, Vec<usize>> = HashMap::new();

    let mut examples = dataset.examples()?;
    for ex in examples.by_ref() {
        let ex = ex?;
        stats.interactions += 1;
        if ex.label.is_positive() {
            stats.positives += 1;
            let query = encode_query(vocab, &ex.query, Some(ex.user), opts);
            pairs.push((
                ex.query,
                EncodedPair {
                    query,
                    item: ex.item_pos,
                    hard_negatives: Vec::new(),
                },
            ));
        } else {
            stats.negatives += 1;
            negatives.entry(ex.query).or_default().push(ex.item_pos);
        }
    }
    stats.dangling_skipped = examples.skipped();

    if let Some(sup) = supervision {
        let mut resolve = |id: &str| -> Result<Option<usize>> {
            match (store.item_position(id), dataset.policy) {
                (Some(p), _) => Ok(Some(p)),
                (None, DanglingPolicy::Strict) => Err(Error::Dangling {
                    kind: "item",
                    id: id.to_string(),
                }),
                (None, DanglingPolicy::Skip) => {
                    stats.dangling_skipped += 1;
                    Ok(None)
                }
            }
        };
        for (q, id) in &sup.positives {
            if let Some(item) = resolve(id)? {
                pairs.push((
                    q.clone(),
                    EncodedPair {
                        query: encode_query(vocab, q, None, opts),
                        item,
                        hard_negatives: Vec::new(),
                    },
                ));
                stats.supervision_positives += 1;
            }
        }
        for (q, id) in &sup.negatives {
            if let Some(item) = resolve(id)? {
                negatives.entry(q.clone()).or_default().push(item);
                stats.supervision_negatives += 1;
            }
        }
    }
    for list in negatives.values_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let pairs = pairs
        .into_iter()
        .map(|(q, mut p)| {
            if let Some(list) = negatives.get(&q) {
                p.hard_negatives = list.clone();
            }
            p
        })
        .collect();
    Ok((TrainCorpus { items, pairs }, stats))
}
