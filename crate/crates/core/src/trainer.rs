//! The training loop: seeded batches, the joint objective, clipped Adam
//! updates and resumable state.
//!
//! Every random draw is keyed by the run seed and the global step (or
//! epoch), so a run restored from its step counter continues exactly as an
//! uninterrupted one.

use alloc::format;
use alloc::vec::Vec;

use crate::corpus::BowCorpus;
use crate::error::{Error, Result};
use crate::grad::{Adam, AdamConfig, ParamStore, Tape};
use crate::knowledge::NodeTable;
use crate::model::{Model, ModelConfig};
use crate::rng;
use crate::taxonomy::ConceptTaxonomy;

/// Gradient global-norm cap.
pub const CLIP_NORM: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EarlyStop {
    pub patience: usize,
    pub min_rel_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop { patience: 20, min_rel_improvement: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub early_stop: Option<EarlyStop>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            adam: AdamConfig::default(),
            batch_size: 200,
            epochs: 200,
            seed: 0,
            clip_norm: CLIP_NORM,
            early_stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip norm must be positive"));
        }
        Ok(())
    }
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub neg_elbo: f64,
    pub contrastive: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// Epoch means of the step losses.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: u64,
    pub neg_elbo: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// Loop position and history; together with the parameters and optimizer
/// moments this is everything needed to resume.
#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    /// Batches of `epoch` already consumed.
    pub batch_in_epoch: usize,
    pub history: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best: Option<f64>,
    pub since_best: usize,
    pub stopped_early: bool,
}

pub struct TrainRun {
    config: TrainConfig,
    model: Model,
    store: ParamStore,
    adam: Adam,
    table: Option<NodeTable>,
    state: TrainState,
}

impl TrainRun {
    /// A fresh run. With a taxonomy the topic counts must mirror its layer
    /// sizes.
    pub fn new(config: TrainConfig, vocab_size: usize, taxonomy: Option<&ConceptTaxonomy>) -> Result<Self> {
        config.validate()?;
        let table = taxonomy.map(|t| NodeTable::new(t, &config.model.topics)).transpose()?;
        let (model, store) = Model::new(config.model.clone(), vocab_size, config.seed)?;
        let adam = Adam::new(&store, config.adam)?;
        Ok(TrainRun { config, model, store, adam, table, state: TrainState::default() })
    }

    /// Rebuilds a run from saved parts.
    pub fn restore(
        config: TrainConfig,
        vocab_size: usize,
        taxonomy: Option<&ConceptTaxonomy>,
        store: ParamStore,
        adam: Adam,
        state: TrainState,
    ) -> Result<Self> {
        config.validate()?;
        let table = taxonomy.map(|t| NodeTable::new(t, &config.model.topics)).transpose()?;
        let model = Model::bind(config.model.clone(), vocab_size, &store)?;
        if adam.first_moments().len() != store.len() {
            return Err(Error::validation("optimizer state does not match the parameters"));
        }
        Ok(TrainRun { config, model, store, adam, table, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn node_table(&self) -> Option<&NodeTable> {
        self.table.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped_early || self.state.epoch as usize >= self.config.epochs
    }

    fn knowledge_active(&self) -> bool {
        self.table.is_some() && self.config.model.lambda > 0.0
    }

    /// One optimizer step on the given documents. Nothing is modified when
    /// the loss or a gradient is not finite.
    pub fn train_step(&mut self, corpus: &BowCorpus, docs: &[usize]) -> Result<StepRecord> {
        let step = self.state.step;
        let cfg = &self.config.model;
        let x = corpus.batch(docs);
        let mut tape = Tape::new();
        let mut noise = rng::stream(self.config.seed, rng::PURPOSE_STEP, step);
        let fwd = self.model.forward(&mut tape, &self.store, &x, &mut noise, true);
        let neg_elbo = tape.scalar(fwd.neg_elbo);
        let (root, contrastive) = match (&self.table, self.knowledge_active()) {
            (Some(table), true) => {
                let nodes = table.assemble(&mut tape, fwd.words, &fwd.topics);
                let mut pick = rng::stream(self.config.seed, rng::PURPOSE_POSITIVE, step);
                let terms = table.sample_terms(tape.value(nodes), cfg.space, cfg.neg_samples, &mut pick);
                let c = tape.info_nce(nodes, terms, cfg.tau, cfg.space);
                let cv = tape.scalar(c);
                let weighted = tape.scale(c, cfg.lambda);
                (tape.add(fwd.neg_elbo, weighted), cv)
            }
            _ => (fwd.neg_elbo, 0.0),
        };
        let total = tape.scalar(root);
        if !total.is_finite() {
            return Err(Error::NonFinite { name: "loss".into(), step });
        }
        let mut grads = tape.backward(root, &self.store);
        grads.check_finite(&self.store, step)?;
        let grad_norm = grads.clip_global_norm(self.config.clip_norm);
        self.model.update_running_stats(&fwd, &tape, &mut self.store);
        self.adam.step(&mut self.store, &grads)?;
        self.store.round_to_f32();
        self.adam.round_to_f32();
        if let Some(p) = self.store.iter().find(|p| !p.value().all_finite()) {
            return Err(Error::NonFinite { name: p.name().into(), step });
        }
        let rec = StepRecord { step, epoch: self.state.epoch, neg_elbo, contrastive, total, grad_norm };
        self.state.history.push(rec);
        self.state.step += 1;
        Ok(rec)
    }

    /// Runs the remaining batches of the current epoch, calling `observe`
    /// after every step. Returns the epoch summary once the epoch completes.
    pub fn run_epoch(
        &mut self,
        corpus: &BowCorpus,
        mut observe: impl FnMut(&StepRecord),
    ) -> Result<Option<EpochRecord>> {
        self.run_steps(corpus, usize::MAX, &mut observe)
    }

    /// Runs at most `max_steps` steps without crossing an epoch boundary.
    pub fn run_steps(
        &mut self,
        corpus: &BowCorpus,
        max_steps: usize,
        observe: &mut impl FnMut(&StepRecord),
    ) -> Result<Option<EpochRecord>> {
        if self.is_finished() {
            return Ok(None);
        }
        let batches = corpus.epoch_batches(self.config.batch_size, self.config.seed, self.state.epoch)?;
        let mut done = 0;
        while self.state.batch_in_epoch < batches.len() && done < max_steps {
            let rec = self.train_step(corpus, &batches[self.state.batch_in_epoch])?;
            self.state.batch_in_epoch += 1;
            done += 1;
            observe(&rec);
        }
        if self.state.batch_in_epoch < batches.len() {
            return Ok(None);
        }
        Ok(Some(self.finish_epoch()))
    }

    fn finish_epoch(&mut self) -> EpochRecord {
        let e = self.state.epoch;
        let recs: Vec<&StepRecord> = self.state.history.iter().filter(|r| r.epoch == e).collect();
        let n = recs.len().max(1) as f64;
        let rec = EpochRecord {
            epoch: e,
            neg_elbo: recs.iter().map(|r| r.neg_elbo).sum::<f64>() / n,
            contrastive: recs.iter().map(|r| r.contrastive).sum::<f64>() / n,
            total: recs.iter().map(|r| r.total).sum::<f64>() / n,
        };
        self.state.epochs.push(rec);
        self.state.epoch += 1;
        self.state.batch_in_epoch = 0;
        if let Some(es) = self.config.early_stop {
            let improved = match self.state.best {
                None => true,
                Some(b) => rec.neg_elbo < b - es.min_rel_improvement * libm::fabs(b),
            };
            if improved {
                self.state.best = Some(rec.neg_elbo);
                self.state.since_best = 0;
            } else {
                self.state.since_best += 1;
                if self.state.since_best >= es.patience {
                    self.state.stopped_early = true;
                }
            }
        }
        rec
    }

    /// Trains until the epoch budget is spent or early stopping triggers.
    pub fn train(&mut self, corpus: &BowCorpus, mut observe: impl FnMut(&StepRecord)) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(corpus, &mut observe)?;
        }
        Ok(())
    }

    /// Consumes the run, returning its parts.
    pub fn into_parts(self) -> (TrainConfig, Model, ParamStore, Adam, TrainState) {
        (self.config, self.model, self.store, self.adam, self.state)
    }
}
