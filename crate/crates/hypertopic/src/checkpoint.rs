//! Checkpoint directories: `meta.json` plus one little-endian `f32` file per
//! parameter and per optimizer moment.
//!
//! Parameters and moments are rounded to `f32` after every training step, so
//! the files hold them exactly and a resumed run continues bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hypertopic_core::grad::{Adam, ParamStore};
use hypertopic_core::matrix::Matrix;
use hypertopic_core::model::Model;
use hypertopic_core::taxonomy::ConceptTaxonomy;
use hypertopic_core::trainer::{TrainConfig, TrainRun, TrainState};
use serde::{Deserialize, Serialize};

use crate::io::{f32_bytes, load_taxonomy, read_f32_array, save_taxonomy};

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const TAXONOMY_FILE: &str = "taxonomy.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub file: String,
}

/// Position of every random stream: all draws are keyed by the seed and the
/// step or epoch counters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_step: u64,
    pub epoch: u64,
    pub batch_in_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub crate_version: String,
    pub vocab_size: usize,
    pub geometry: String,
    pub step: u64,
    pub rng: RngState,
    pub config: TrainConfig,
    pub params: Vec<ArrayEntry>,
    pub adam_steps: u64,
    pub has_taxonomy: bool,
    pub state: TrainState,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: Meta,
    pub store: ParamStore,
    pub adam: Adam,
    pub taxonomy: Option<ConceptTaxonomy>,
}

impl Checkpoint {
    pub fn from_run(run: &TrainRun, vocab_size: usize, taxonomy: Option<&ConceptTaxonomy>) -> Self {
        let cfg = run.config().clone();
        let state = run.state().clone();
        let params = run
            .store()
            .iter()
            .map(|p| ArrayEntry {
                name: p.name().to_owned(),
                rows: p.value().rows(),
                cols: p.value().cols(),
                trainable: p.trainable(),
                file: format!("{}.f32", p.name()),
            })
            .collect();
        let meta = Meta {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_owned(),
            vocab_size,
            geometry: cfg.model.space.kind().to_string(),
            step: state.step,
            rng: RngState {
                seed: cfg.seed,
                next_step: state.step,
                epoch: state.epoch,
                batch_in_epoch: state.batch_in_epoch,
            },
            config: cfg,
            params,
            adam_steps: run.optimizer().steps(),
            has_taxonomy: taxonomy.is_some(),
            state,
        };
        Checkpoint {
            meta,
            store: run.store().clone(),
            adam: run.optimizer().clone(),
            taxonomy: taxonomy.cloned(),
        }
    }

    /// The model bound to the saved parameters.
    pub fn model(&self) -> Result<Model> {
        Ok(Model::bind(self.meta.config.model.clone(), self.meta.vocab_size, &self.store)?)
    }

    /// A training run continuing from this checkpoint.
    pub fn into_run(self) -> Result<TrainRun> {
        Ok(TrainRun::restore(
            self.meta.config,
            self.meta.vocab_size,
            self.taxonomy.as_ref(),
            self.store,
            self.adam,
            self.meta.state,
        )?)
    }

    /// Writes into a sibling staging directory and swaps it into place, so
    /// an interrupted save leaves the previous checkpoint intact.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let staging = sibling(dir, "partial");
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(staging.join("params"))?;
        fs::create_dir_all(staging.join("adam"))?;
        let m = self.adam.first_moments();
        let v = self.adam.second_moments();
        for (i, (entry, p)) in self.meta.params.iter().zip(self.store.iter()).enumerate() {
            fs::write(staging.join("params").join(&entry.file), f32_bytes(p.value().data()))?;
            fs::write(staging.join("adam").join(format!("m.{}", entry.file)), f32_bytes(m[i].data()))?;
            fs::write(staging.join("adam").join(format!("v.{}", entry.file)), f32_bytes(v[i].data()))?;
        }
        if let Some(t) = &self.taxonomy {
            save_taxonomy(&staging.join(TAXONOMY_FILE), t)?;
        }
        fs::write(staging.join(META_FILE), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        let old = sibling(dir, "old");
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        if dir.exists() {
            fs::rename(dir, &old).with_context(|| format!("moving aside {}", dir.display()))?;
        }
        fs::rename(&staging, dir).with_context(|| format!("installing {}", dir.display()))?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?;
        let probe: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", meta_path.display()))?;
        let version = probe.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(FORMAT_VERSION as u64) {
            bail!(
                "{}: checkpoint format version {} is incompatible with this build (expects {FORMAT_VERSION})",
                meta_path.display(),
                version.map_or("missing".to_owned(), |v| v.to_string())
            );
        }
        let meta: Meta = serde_json::from_value(probe).with_context(|| format!("parsing {}", meta_path.display()))?;
        let (_, mut store) = Model::new(meta.config.model.clone(), meta.vocab_size, meta.config.seed)?;
        if store.len() != meta.params.len() {
            bail!("{}: {} arrays listed, model expects {}", meta_path.display(), meta.params.len(), store.len());
        }
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (i, entry) in meta.params.iter().enumerate() {
            let id = store
                .id(&entry.name)
                .filter(|id| id.index() == i)
                .with_context(|| format!("{}: unexpected parameter `{}` at position {i}", meta_path.display(), entry.name))?;
            let len = entry.rows * entry.cols;
            let load = |p: PathBuf| -> Result<Matrix> {
                Ok(Matrix::from_vec(entry.rows, entry.cols, read_f32_array(&p, len)?)?)
            };
            store
                .set(id, load(dir.join("params").join(&entry.file))?)
                .with_context(|| format!("parameter `{}`", entry.name))?;
            m.push(load(dir.join("adam").join(format!("m.{}", entry.file)))?);
            v.push(load(dir.join("adam").join(format!("v.{}", entry.file)))?);
        }
        let adam = Adam::from_parts(meta.config.adam, meta.adam_steps, m, v);
        let taxonomy = if meta.has_taxonomy { Some(load_taxonomy(&dir.join(TAXONOMY_FILE))?) } else { None };
        Ok(Checkpoint { meta, store, adam, taxonomy })
    }
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
    dir.with_file_name(format!(".{name}.{tag}"))
}

