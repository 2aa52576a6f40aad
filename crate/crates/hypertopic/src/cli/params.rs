//! Training hyperparameters shared by `train` and `sweep-lambda`, with the
//! TOML overlay merged underneath explicit flags.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use hypertopic_core::geometry::{GeometryKind, Space};
use hypertopic_core::model::{GammaParam, Mode, ModelConfig};
use hypertopic_core::trainer::{EarlyStop, TrainConfig};
use serde::Deserialize;

use super::UsageError;

#[derive(Args, Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// Model family: `flat` or `hierarchical` [default: hierarchical] (project default)
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Embedding space: `poincare`, `lorentz` or `euclidean` [default: poincare] (project default)
    #[arg(long)]
    pub geometry: Option<GeometryKind>,
    /// Negative curvature of the hyperbolic space [default: -1] (project default)
    #[arg(long, allow_hyphen_values = true)]
    pub curvature: Option<f64>,
    /// Embedding dimension [default: 50] (published setting)
    #[arg(long)]
    pub dim: Option<usize>,
    /// Hidden units of every encoder layer [default: 300] (published setting)
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Adam learning rate [default: 0.01] (published setting)
    #[arg(long)]
    pub lr: Option<f64>,
    /// Documents per mini-batch [default: 200] (published setting)
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training epochs [default: 200] (project default)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Weight of the contrastive term [default: 5] (published setting)
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Contrastive temperature [default: 1.0] (project default)
    #[arg(long)]
    pub tau: Option<f64>,
    /// Hard negatives per anchor [default: 256] (published setting)
    #[arg(long)]
    pub neg_samples: Option<usize>,
    /// Seed for initialization, batching and sampling [default: 0] (project default)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Topics per layer, layer 1 (nearest the words) first, comma separated; required unless taken from a taxonomy
    #[arg(long, value_delimiter = ',')]
    pub topics: Option<Vec<usize>>,
    /// Posterior samples per document and step [default: 1] (project default)
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Reading of the Gamma prior's second argument: `scale` or `rate` [default: scale] (project default)
    #[arg(long)]
    pub gamma_param: Option<GammaParam>,
    /// Global gradient-norm cap [default: 10] (project default)
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Stop after this many epochs without a 1e-4 relative improvement of the epoch -ELBO [default: off] (project default: 20 when enabled)
    #[arg(long)]
    pub patience: Option<usize>,
}

macro_rules! overlay {
    ($a:ident, $b:ident, $($f:ident),*) => {
        HyperParams { $($f: $a.$f.clone().or_else(|| $b.$f.clone()),)* }
    };
}

impl HyperParams {
    /// Fields set here win; the rest come from `base`.
    pub fn over(&self, base: &HyperParams) -> HyperParams {
        let (a, b) = (self, base);
        overlay!(
            a, b, mode, geometry, curvature, dim, hidden, lr, batch_size, epochs, lambda, tau, neg_samples, seed,
            topics, mc_samples, gamma_param, clip_norm, patience
        )
    }

    pub fn from_toml_file(path: &Path) -> Result<HyperParams> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    pub fn is_empty(&self) -> bool {
        *self == HyperParams::default()
    }

    /// Fills in defaults. `taxonomy_sizes` (root first) supplies the layer
    /// sizes when `--topics` is absent.
    pub fn resolve(&self, taxonomy_sizes: Option<&[usize]>) -> Result<TrainConfig> {
        let mode = self.mode.unwrap_or(Mode::Hierarchical);
        let topics = match (&self.topics, taxonomy_sizes) {
            (Some(t), _) => t.clone(),
            (None, Some(sizes)) => match mode {
                Mode::Hierarchical => sizes.iter().rev().copied().collect(),
                Mode::Flat => vec![*sizes.last().expect("taxonomy has layers")],
            },
            (None, None) => {
                return Err(UsageError("--topics is required unless --layers-from-taxonomy is given".into()).into())
            }
        };
        let geometry = self.geometry.unwrap_or(GeometryKind::Poincare);
        let space = Space::new(geometry, self.curvature.unwrap_or(-1.0))?;
        let mut m = ModelConfig::new(mode, topics);
        m.space = space;
        m.dim = self.dim.unwrap_or(m.dim);
        m.hidden = self.hidden.unwrap_or(m.hidden);
        m.lambda = self.lambda.unwrap_or(m.lambda);
        m.tau = self.tau.unwrap_or(m.tau);
        m.neg_samples = self.neg_samples.unwrap_or(m.neg_samples);
        m.mc_samples = self.mc_samples.unwrap_or(m.mc_samples);
        m.gamma_param = self.gamma_param.unwrap_or(m.gamma_param);
        let mut c = TrainConfig::new(m);
        c.adam.lr = self.lr.unwrap_or(c.adam.lr);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.seed = self.seed.unwrap_or(c.seed);
        c.clip_norm = self.clip_norm.unwrap_or(c.clip_norm);
        c.early_stop = self.patience.map(|patience| EarlyStop { patience, ..EarlyStop::default() });
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file_and_defaults_fill_the_rest() {
        let file: HyperParams = toml::from_str("dim = 8\nlr = 0.5\ntopics = [4, 2]\n").unwrap();
        let flags = HyperParams { dim: Some(3), ..Default::default() };
        let c = flags.over(&file).resolve(None).unwrap();
        assert_eq!(c.model.dim, 3);
        assert_eq!(c.adam.lr, 0.5);
        assert_eq!(c.model.topics, vec![4, 2]);
        assert_eq!(c.batch_size, 200);
        assert_eq!(c.model.hidden, 300);
        assert!(toml::from_str::<HyperParams>("dims = 3").is_err());
    }

    #[test]
    fn taxonomy_sizes_are_reversed() {
        let c = HyperParams::default().resolve(Some(&[2, 5, 9])).unwrap();
        assert_eq!(c.model.topics, vec![9, 5, 2]);
        let flat = HyperParams { mode: Some(Mode::Flat), ..Default::default() };
        assert_eq!(flat.resolve(Some(&[2, 5, 9])).unwrap().model.topics, vec![9]);
        assert!(HyperParams::default().resolve(None).is_err());
    }
}
