use log::info;
use twotower_core::ingest::synthetic::{generate_synthetic, SyntheticSpec, SYNTHETIC_FILES};
use twotower_core::ingest::{load_supervision, vocabulary_inputs, Dataset};
use twotower_core::tokenizer::Vocabulary;

use super::DataPaths;
use crate::args::{BuildVocabArgs, SynthArgs};
use crate::config::Resolver;
use crate::error::CliResult;
use crate::manifest::{manifest_path_for, now_unix, verify_input, write_atomic, RunManifest, DIR_MANIFEST};

pub fn synth(r: &mut Resolver, a: SynthArgs) -> CliResult<()> {
    let started = now_unix();
    let d = SyntheticSpec::default();
    let out: std::path::PathBuf = r.require("out", a.out)?;
    let spec = SyntheticSpec {
        clusters: r.get("clusters", a.clusters, d.clusters)?,
        items_per_cluster: r.get("items-per-cluster", a.items_per_cluster, d.items_per_cluster)?,
        queries_per_cluster: r.get("queries-per-cluster", a.queries_per_cluster, d.queries_per_cluster)?,
        words_per_cluster: r.get("words-per-cluster", a.words_per_cluster, d.words_per_cluster)?,
        title_words: r.get("title-words", a.title_words, d.title_words)?,
        users: r.get("users", a.users, d.users)?,
        clicks: r.get("clicks", a.clicks, d.clicks)?,
        heldout: r.get("heldout", a.heldout, d.heldout)?,
        noise: r.get("noise", a.noise, d.noise)?,
        skew: r.get("skew", a.skew, d.skew)?,
        polysemous_pairs: r.get("polysemous-pairs", a.polysemous_pairs, d.polysemous_pairs)?,
        ambiguous_share: r.get("ambiguous-share", a.ambiguous_share, d.ambiguous_share)?,
        seed: r.get("seed", a.seed, d.seed)?,
    };
    let config = std::mem::take(r).finish()?;
    spec.validate()?;
    let corpus = generate_synthetic(&spec)?;
    corpus.write(&out)?;
    info!(
        "wrote {} users, {} items, {} interactions, {} held-out rows to {}",
        corpus.users.len(),
        corpus.items.len(),
        corpus.interactions.len(),
        corpus.heldout.len(),
        out.display()
    );
    let mut m = RunManifest::new("synth", config, Some(spec.seed), started);
    for f in SYNTHETIC_FILES {
        m.output(&out.join(f))?;
    }
    m.write(&out.join(DIR_MANIFEST))
}

pub fn build_vocab(r: &mut Resolver, a: BuildVocabArgs) -> CliResult<()> {
    let started = now_unix();
    let paths = DataPaths::resolve(r, a.data)?;
    let supervision: Option<std::path::PathBuf> = r.optional("supervision", a.supervision)?;
    let min_count = r.get("min-count", a.min_count, 1)?;
    let out: std::path::PathBuf = r.require("out", a.out)?;
    let config = std::mem::take(r).finish()?;

    let ds = Dataset::open(&paths.users, &paths.items, &paths.interactions, paths.policy)?;
    let (mut texts, features) = vocabulary_inputs(&ds)?;
    if let Some(s) = &supervision {
        verify_input(s)?;
        let sup = load_supervision(s)?;
        texts.extend(sup.positives.iter().chain(&sup.negatives).map(|(q, _)| q.clone()));
    }
    let vocab = Vocabulary::build_with_features(texts, features, min_count)?;
    write_atomic(&out, &vocab.to_bytes())?;
    info!("vocabulary of {} entries, sha256 {}", vocab.len(), vocab.hash());

    let mut m = RunManifest::new("build-vocab", config, None, started);
    for p in paths.all() {
        m.input(p)?;
    }
    if let Some(s) = &supervision {
        m.input(s)?;
    }
    m.output(&out)?;
    m.write(&manifest_path_for(&out))
}
