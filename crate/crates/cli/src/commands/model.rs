use std::path::{Path, PathBuf};

use log::{info, warn};
use twotower_core::checkpoint::{self, ModelInfo};
use twotower_core::eval::{export_items, export_queries};
use twotower_core::index::{self, EmbeddingIndex, IndexParams};
use twotower_core::ingest::{
    build_train_corpus, encode_item, encode_query, load_supervision, read_items, Dataset, FeatureOptions,
};
use twotower_core::servable::item_vectors;
use twotower_core::tokenizer::Vocabulary;
use twotower_core::towers::{TowerConfig, TwoTower};
use twotower_core::training::{self, EncodedItem, ProgressLine, TrainConfig, TrainObserver};

use super::DataPaths;
use crate::args::{BuildIndexArgs, ExportArgs, TrainArgs};
use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path_for, now_unix, verify_input, write_atomic, RunManifest};

/// Loads a checkpoint and vocabulary that must belong together.
pub(crate) fn load_model(ckpt: &Path, vocab: &Path) -> CliResult<(TwoTower, ModelInfo, Vocabulary)> {
    verify_input(ckpt)?;
    verify_input(vocab)?;
    let (towers, meta) = checkpoint::load(ckpt)?;
    let v = Vocabulary::load(vocab)?;
    if v.hash() != meta.info.vocab_hash {
        return Err(twotower_core::Error::VocabMismatch {
            expected: meta.info.vocab_hash.clone(),
            found: v.hash(),
        }
        .into());
    }
    if v.len() != meta.config.vocab_size {
        return Err(CliError::Dimension(format!(
            "vocabulary has {} entries, checkpoint expects {}",
            v.len(),
            meta.config.vocab_size
        )));
    }
    Ok((towers, meta.info, v))
}

struct Progress<'a> {
    out: &'a Path,
    info: &'a ModelInfo,
}

impl TrainObserver for Progress<'_> {
    fn on_progress(&mut self, line: &ProgressLine) {
        eprintln!("{line}");
    }

    fn on_checkpoint(&mut self, step: usize, towers: &TwoTower) -> twotower_core::Result<()> {
        let mut name = self.out.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".step{step}"));
        let path = self.out.with_file_name(name);
        write_atomic(&path, &checkpoint::to_bytes(towers, self.info))
            .map_err(|e| twotower_core::Error::Config(e.to_string()))?;
        info!("intermediate checkpoint {}", path.display());
        Ok(())
    }
}

pub fn train(r: &mut Resolver, a: TrainArgs) -> CliResult<()> {
    let started = now_unix();
    let paths = DataPaths::resolve(r, a.data)?;
    let vocab_path: PathBuf = r.require("vocab", a.vocab)?;
    let supervision: Option<PathBuf> = r.optional("supervision", a.supervision)?;
    let out: PathBuf = r.require("out", a.out)?;
    let td = TowerConfig::default();
    let mut tower = TowerConfig {
        dim: r.get("dim", a.dim, td.dim)?,
        heads: r.get("heads", a.heads, td.heads)?,
        agg_dim: r.get("agg-dim", a.agg_dim, td.agg_dim)?,
        mlp_hidden: r.get("mlp-hidden", a.mlp_hidden, td.mlp_hidden)?,
        vocab_size: 0,
    };
    let d = TrainConfig::default();
    let tc = TrainConfig {
        batch_size: r.get("batch-size", a.batch_size, d.batch_size)?,
        max_steps: r.get("steps", a.steps, d.max_steps)?,
        epochs: r.get("epochs", a.epochs, d.epochs)?,
        alpha: r.get("alpha", a.alpha, d.alpha)?,
        beta: r.get("beta", a.beta, d.beta)?,
        delta: r.get("delta", a.delta, d.delta)?,
        lr: r.get("lr", a.lr, d.lr)?,
        n_neg: r.get("n-neg", a.n_neg, d.n_neg)?,
        n_rand: r.get("n-rand", a.n_rand, d.n_rand)?,
        seed: r.get("seed", a.seed, d.seed)?,
        log_every: r.get("log-every", a.log_every, d.log_every)?,
        checkpoint_every: r.get("checkpoint-every", a.checkpoint_every, d.checkpoint_every)?,
    };
    let features = FeatureOptions {
        user_features: r.get("user-features", a.user_features, false)?,
        item_features: r.get("item-features", a.item_features, false)?,
    };
    let config = std::mem::take(r).finish()?;
    tc.validate()?;

    verify_input(&vocab_path)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let ds = Dataset::open(&paths.users, &paths.items, &paths.interactions, paths.policy)?;
    let sup = match &supervision {
        Some(p) => {
            verify_input(p)?;
            let s = load_supervision(p)?;
            if s.duplicate_positives > 0 {
                warn!("{} duplicate supervision positives ignored", s.duplicate_positives);
            }
            Some(s)
        }
        None => None,
    };
    let (corpus, stats) = build_train_corpus(&ds, &vocab, sup.as_ref(), features)?;
    info!(
        "{} interactions: {} positives, {} negatives, {} dangling skipped; supervision {} positives, {} negatives",
        stats.interactions,
        stats.positives,
        stats.negatives,
        stats.dangling_skipped,
        stats.supervision_positives,
        stats.supervision_negatives
    );
    tower.vocab_size = vocab.len();
    tower.validate()?;
    let towers = TwoTower::init(tower, tc.seed)?;
    let mut info_ = ModelInfo::new(vocab.hash(), tc.beta);
    info_.features = features;
    let mut observer = Progress { out: &out, info: &info_ };
    let (towers, report) = training::train(towers, &corpus, &tc, &mut observer)?;
    info!("trained {} steps over {} examples, last loss {:.6}", report.steps, report.examples, report.last_loss);
    write_atomic(&out, &checkpoint::to_bytes(&towers, &info_))?;

    let mut m = RunManifest::new("train", config, Some(tc.seed), started);
    for p in paths.all() {
        m.input(p)?;
    }
    m.input(&vocab_path)?;
    if let Some(s) = &supervision {
        m.input(s)?;
    }
    m.output(&out)?;
    m.write(&manifest_path_for(&out))
}

fn items_path(r: &mut Resolver, items: Option<PathBuf>, data: Option<PathBuf>) -> CliResult<PathBuf> {
    let items: Option<PathBuf> = r.optional("items", items)?;
    let data: Option<PathBuf> = r.optional("data", data)?;
    items
        .or_else(|| data.map(|d| d.join("items.tsv")))
        .ok_or_else(|| CliError::Usage("--items or --data is required".into()))
}

pub fn build_index(r: &mut Resolver, a: BuildIndexArgs) -> CliResult<()> {
    let started = now_unix();
    let ckpt: PathBuf = r.require("checkpoint", a.checkpoint)?;
    let vocab_path: PathBuf = r.require("vocab", a.vocab)?;
    let items = items_path(r, a.items, a.data)?;
    let out: PathBuf = r.require("out", a.out)?;
    let dim: Option<usize> = r.optional("dim", a.dim)?;
    let d = IndexParams::default();
    let params = IndexParams {
        m: r.get("m", a.m, d.m)?,
        ef_construction: r.get("ef-construction", a.ef_construction, d.ef_construction)?,
        ef_search: r.get("ef-search", a.ef_search, d.ef_search)?,
        exact_threshold: r.get("exact-threshold", a.exact_threshold, d.exact_threshold)?,
        seed: r.get("seed", a.seed, d.seed)?,
    };
    let config = std::mem::take(r).finish()?;

    let (towers, info_, vocab) = load_model(&ckpt, &vocab_path)?;
    if let Some(expected) = dim {
        if towers.config.dim != expected {
            return Err(CliError::Dimension(format!(
                "checkpoint embedding dimension {} does not match expected {expected}",
                towers.config.dim
            )));
        }
    }
    verify_input(&items)?;
    let records = read_items(&items)?;
    let encoded: Vec<EncodedItem> = records
        .iter()
        .map(|it| EncodedItem {
            id: it.id.clone(),
            tokens: encode_item(&vocab, it, info_.features),
        })
        .collect();
    let vectors = item_vectors(&towers.item, &encoded)?;
    let idx = EmbeddingIndex::build(vectors, params.clone())?;
    info!(
        "indexed {} items, d={}, {}",
        idx.len(),
        idx.dim(),
        if idx.is_exact() { "flat" } else { "graph" }
    );
    write_atomic(&out, &index::to_bytes(&idx))?;

    let mut m = RunManifest::new("build-index", config, Some(params.seed), started);
    m.input(&ckpt)?;
    m.input(&vocab_path)?;
    m.input(&items)?;
    m.output(&out)?;
    m.write(&manifest_path_for(&out))
}

pub fn export(r: &mut Resolver, a: ExportArgs) -> CliResult<()> {
    let started = now_unix();
    let ckpt: PathBuf = r.require("checkpoint", a.checkpoint)?;
    let vocab_path: PathBuf = r.require("vocab", a.vocab)?;
    let what: String = r.require("what", a.what)?;
    let items: Option<PathBuf> = r.optional("items", a.items)?;
    let queries: Option<PathBuf> = r.optional("queries", a.queries)?;
    let out: PathBuf = r.require("out", a.out)?;
    let config = std::mem::take(r).finish()?;

    let (towers, info_, vocab) = load_model(&ckpt, &vocab_path)?;
    let mut buf = Vec::new();
    let input = match what.as_str() {
        "items" => {
            let p = items.ok_or_else(|| CliError::Usage("--items is required for item export".into()))?;
            verify_input(&p)?;
            let encoded: Vec<EncodedItem> = read_items(&p)?
                .iter()
                .map(|it| EncodedItem {
                    id: it.id.clone(),
                    tokens: encode_item(&vocab, it, info_.features),
                })
                .collect();
            let n = export_items(&towers.item, &encoded, &mut buf)?;
            info!("exported {n} item rows");
            p
        }
        "queries" => {
            let p = queries.ok_or_else(|| CliError::Usage("--queries is required for query export".into()))?;
            verify_input(&p)?;
            let text = std::fs::read_to_string(&p)?;
            let mut encoded = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                if line.contains('\t') {
                    return Err(CliError::Usage(format!("query {line:?} contains a TAB")));
                }
                encoded.push((line.to_string(), encode_query(&vocab, line, None, info_.features)));
            }
            let n = export_queries(&towers.query, &encoded, &mut buf)?;
            info!("exported {n} query head rows");
            p
        }
        other => return Err(CliError::Usage(format!("--what must be items or queries, got {other:?}"))),
    };
    write_atomic(&out, &buf)?;
    let mut m = RunManifest::new("export", config, None, started);
    m.input(&ckpt)?;
    m.input(&vocab_path)?;
    m.input(&input)?;
    m.output(&out)?;
    m.write(&manifest_path_for(&out))
}
