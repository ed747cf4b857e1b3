//! Hinge-loss training of both towers with hybrid (random + in-batch)
//! negatives.

pub mod batch;
pub mod negatives;
pub mod optimizer;
pub mod scoring;
pub mod step;

use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::towers::TwoTower;
pub use batch::{assemble_batch, Batch, EncodedItem, EncodedPair, TrainCorpus};
pub use optimizer::AdaGrad;
pub use step::{batch_loss, loss_and_grad, train_step, LossParams, StepStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Upper bound on optimizer steps.
    pub max_steps: usize,
    /// Passes over the data; training stops at whichever limit comes first.
    pub epochs: usize,
    /// Fraction of each negative budget taken from the random pool.
    pub alpha: f64,
    /// Softmax temperature of the head attention.
    pub beta: f64,
    /// Hinge margin.
    pub delta: f64,
    pub lr: f64,
    pub n_neg: usize,
    pub n_rand: usize,
    pub seed: u64,
    /// Emit a progress line every this many steps (0 disables).
    pub log_every: usize,
    /// Write an intermediate checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_steps: 1_000_000,
            epochs: 1,
            alpha: 0.5,
            beta: 1.0,
            delta: 0.1,
            lr: 0.01,
            n_neg: 64,
            n_rand: 64,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must be in [0, 1]");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be > 0");
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be >= 0");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.n_neg < 1 {
            return bad("n_neg must be >= 1");
        }
        if self.batch_size < 1 || (self.alpha < 1.0 && self.batch_size < 2) {
            return bad("batch_size must be >= 2 when alpha < 1");
        }
        if self.alpha > 0.0 && self.n_rand < 1 {
            return bad("n_rand must be >= 1 when alpha > 0");
        }
        Ok(())
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            beta: self.beta,
            delta: self.delta,
        }
    }
}

/// One progress record: `step<TAB>loss<TAB>examples_per_sec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressLine {
    pub step: usize,
    pub loss: f64,
    pub examples_per_sec: f64,
}

impl std::fmt::Display for ProgressLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{:.6}\t{:.1}", self.step, self.loss, self.examples_per_sec)
    }
}

/// Hooks for progress output and intermediate checkpoints.
pub trait TrainObserver {
    fn on_progress(&mut self, _line: &ProgressLine) {}

    fn on_checkpoint(&mut self, _step: usize, _towers: &TwoTower) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct Quiet;

impl TrainObserver for Quiet {}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub steps: usize,
    pub examples: usize,
    /// Mean batch loss over each logging window.
    pub progress: Vec<ProgressLine>,
    pub last_loss: f64,
}

/// Runs the training loop from freshly initialized towers.
pub fn train(
    towers: TwoTower,
    corpus: &TrainCorpus,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(TwoTower, TrainReport)> {
    config.validate()?;
    if corpus.pairs.is_empty() || corpus.items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut towers = towers;
    let mut report = TrainReport::default();
    if config.max_steps == 0 {
        return Ok((towers, report));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = AdaGrad::new(&towers, config.lr);
    let min_batch = if config.alpha < 1.0 { 2 } else { 1 };
    let params = config.loss_params();

    let mut order: Vec<usize> = (0..corpus.pairs.len()).collect();
    let mut window_loss = 0.0;
    let mut window_steps = 0usize;
    let mut window_examples = 0usize;
    let mut window_start = Instant::now();

    'epochs: for epoch in 0..config.epochs.max(1) {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if report.steps >= config.max_steps {
                break 'epochs;
            }
            if chunk.len() < min_batch {
                continue;
            }
            let batch = assemble_batch(corpus, chunk, config, &mut rng)?;
            let stats = train_step(&mut towers, corpus, &batch, params, &mut optimizer, report.steps + 1)?;
            report.steps += 1;
            report.examples += chunk.len();
            report.last_loss = stats.loss;
            window_loss += stats.loss;
            window_steps += 1;
            window_examples += chunk.len();

            if config.log_every > 0 && report.steps % config.log_every == 0 {
                let secs = window_start.elapsed().as_secs_f64().max(1e-9);
                let line = ProgressLine {
                    step: report.steps,
                    loss: window_loss / window_steps as f64,
                    examples_per_sec: window_examples as f64 / secs,
                };
                observer.on_progress(&line);
                report.progress.push(line);
                window_loss = 0.0;
                window_steps = 0;
                window_examples = 0;
                window_start = Instant::now();
            }
            if config.checkpoint_every > 0 && report.steps % config.checkpoint_every == 0 {
                observer.on_checkpoint(report.steps, &towers)?;
            }
        }
        info!("epoch {epoch} done after {} steps", report.steps);
    }
    Ok((towers, report))
}
