//! The generative decoder (hierarchical gamma belief network or flat
//! embedded topic model), the ladder encoder, and the ELBO.
//!
//! Layer numbering follows the generative model: layer 1 sits directly above
//! the words and layer `L` is the most abstract. Vectors indexed by layer
//! (`topics`, `e`, the latent state) store layer 1 at index 0.

mod topics;
mod weibull;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::geometry::Space;
use crate::grad::{ParamId, ParamStore, Tape, Var};
use crate::matrix::{Matrix, SparseRows};
use crate::rng::{self, StreamRng};

pub use topics::{compute_phi, phi_from_scores, topic_word_distribution, topic_word_matrix, EmbeddingSet};
pub use weibull::{
    gamma_log_pdf, kl_weibull_gamma, sample_weibull, weibull_cdf, weibull_log_pdf, weibull_mean, UNIFORM_CLAMP,
};

/// Lower bound on Poisson rates and Gamma prior shapes.
pub const RATE_FLOOR: f64 = 1e-10;
/// Range kept for the Weibull shape produced by the encoder.
pub const SHAPE_RANGE: (f64, f64) = (0.1, 100.0);
/// Lower bound on the Weibull scale produced by the encoder.
pub const SCALE_FLOOR: f64 = 1e-10;
/// Standard deviation of the initial tangent parameters.
pub const EMBED_INIT_STD: f64 = 0.01;
/// Weight given to the newest batch in batch-norm running averages.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Mode {
    Flat,
    Hierarchical,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Flat => "flat",
            Mode::Hierarchical => "hierarchical",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Mode::Flat),
            "hierarchical" => Ok(Mode::Hierarchical),
            other => Err(Error::config(format!("unknown mode `{other}`"))),
        }
    }
}

/// How the second argument of the Gamma prior is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum GammaParam {
    #[default]
    Scale,
    Rate,
}

impl fmt::Display for GammaParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GammaParam::Scale => "scale",
            GammaParam::Rate => "rate",
        })
    }
}

impl FromStr for GammaParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scale" => Ok(GammaParam::Scale),
            "rate" => Ok(GammaParam::Rate),
            other => Err(Error::config(format!("unknown gamma parameterization `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub mode: Mode,
    /// Topics per layer, layer 1 first. Flat mode uses exactly one entry.
    pub topics: Vec<usize>,
    pub dim: usize,
    pub space: Space,
    /// Shape of the prior on the top layer, one entry per top topic.
    pub gamma: Vec<f64>,
    /// Prior hyperparameter for each layer's Gamma prior (`e` of the layer
    /// above), layer 1 first.
    pub e: Vec<f64>,
    pub gamma_param: GammaParam,
    pub hidden: usize,
    pub tau: f64,
    pub lambda: f64,
    pub neg_samples: usize,
    pub mc_samples: usize,
}

impl ModelConfig {
    /// A configuration with the stated defaults for everything except the
    /// layer sizes.
    pub fn new(mode: Mode, topics: Vec<usize>) -> Self {
        let top = topics.last().copied().unwrap_or(0);
        let layers = topics.len();
        ModelConfig {
            mode,
            topics,
            dim: 50,
            space: Space::default(),
            gamma: vec![1.0; top],
            e: vec![1.0; layers],
            gamma_param: GammaParam::Scale,
            hidden: 300,
            tau: 1.0,
            lambda: 5.0,
            neg_samples: 256,
            mc_samples: 1,
        }
    }

    pub fn layers(&self) -> usize {
        self.topics.len()
    }

    /// Resizes `gamma` and `e` to the current layer sizes, filling with 1.0.
    pub fn reset_priors(&mut self) {
        self.gamma = vec![1.0; self.topics.last().copied().unwrap_or(0)];
        self.e = vec![1.0; self.topics.len()];
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics.is_empty() || self.topics.contains(&0) {
            return Err(Error::config("every layer needs at least one topic"));
        }
        if self.mode == Mode::Flat && self.topics.len() != 1 {
            return Err(Error::config(format!(
                "flat mode takes a single topic layer, got {}",
                self.topics.len()
            )));
        }
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::config("dim and hidden must be at least 1"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.neg_samples == 0 || self.mc_samples == 0 {
            return Err(Error::config("neg_samples and mc_samples must be at least 1"));
        }
        if self.gamma.len() != *self.topics.last().unwrap() {
            return Err(Error::config(format!(
                "gamma has {} entries but the top layer has {} topics",
                self.gamma.len(),
                self.topics.last().unwrap()
            )));
        }
        if self.e.len() != self.topics.len() {
            return Err(Error::config(format!(
                "e has {} entries but there are {} layers",
                self.e.len(),
                self.topics.len()
            )));
        }
        if self.gamma.iter().chain(&self.e).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::config("gamma and e entries must be positive"));
        }
        if let Some(c) = self.space.curvature() {
            if !(c.value() < 0.0) {
                return Err(Error::config("curvature must be negative"));
            }
        }
        Ok(())
    }

    /// Rate of the Gamma prior on layer `l` (0-based).
    pub fn prior_rate(&self, l: usize) -> f64 {
        match self.gamma_param {
            GammaParam::Scale => 1.0 / self.e[l],
            GammaParam::Rate => self.e[l],
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Embedding,
    /// Uniform on ±1/sqrt(fan_in).
    Uniform(usize),
    Zeros,
    Ones,
}

struct ParamSpec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
    trainable: bool,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct BatchNormIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Mlp {
    fc1: Linear,
    bn: BatchNormIds,
    fc2: Linear,
}

#[derive(Clone, Debug)]
enum Heads {
    Hierarchical { k: Vec<Linear>, t: Vec<Linear> },
    Flat { mu: Linear, logvar: Linear },
}

/// Parameter layout of a model; the values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    vocab_size: usize,
    words: ParamId,
    topics: Vec<ParamId>,
    up: Vec<Mlp>,
    heads: Heads,
}

/// Per-layer posterior parameters and draws for a batch (layer 1 first).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub k: Vec<Matrix>,
    pub t: Vec<Matrix>,
    pub theta: Vec<Matrix>,
    pub h: Vec<Matrix>,
}

/// Tape handles produced by [`Model::forward`].
pub struct Forward {
    /// Batch-mean negative ELBO (1×1).
    pub neg_elbo: Var,
    /// Batch-mean expected log-likelihood.
    pub log_lik: f64,
    /// Batch-mean total KL.
    pub kl: f64,
    /// Word points (V × ambient).
    pub words: Var,
    /// Topic points per layer (K_l × ambient).
    pub topics: Vec<Var>,
    /// Φ⁽ˡ⁾ per layer (K_{l−1} × K_l).
    pub phis: Vec<Var>,
    bn: Vec<(Var, BatchNormIds)>,
}

enum ThetaMode<'a> {
    Sample(&'a mut StreamRng),
    Mean,
}

fn linear_specs(out: &mut Vec<ParamSpec>, name: &str, fan_in: usize, fan_out: usize) {
    out.push(ParamSpec { name: format!("{name}.w"), rows: fan_in, cols: fan_out, init: Init::Uniform(fan_in), trainable: true });
    out.push(ParamSpec { name: format!("{name}.b"), rows: 1, cols: fan_out, init: Init::Zeros, trainable: true });
}

fn mlp_specs(out: &mut Vec<ParamSpec>, name: &str, fan_in: usize, hidden: usize) {
    linear_specs(out, &format!("{name}.fc1"), fan_in, hidden);
    for (part, init, trainable) in [
        ("gamma", Init::Ones, true),
        ("beta", Init::Zeros, true),
        ("mean", Init::Zeros, false),
        ("var", Init::Ones, false),
    ] {
        out.push(ParamSpec { name: format!("{name}.bn.{part}"), rows: 1, cols: hidden, init, trainable });
    }
    linear_specs(out, &format!("{name}.fc2"), hidden, hidden);
}

fn param_specs(config: &ModelConfig, vocab_size: usize) -> Vec<ParamSpec> {
    let d = config.dim;
    let h = config.hidden;
    let mut s = Vec::new();
    s.push(ParamSpec { name: "embed.words".into(), rows: vocab_size, cols: d, init: Init::Embedding, trainable: true });
    for (l, &k) in config.topics.iter().enumerate() {
        s.push(ParamSpec { name: format!("embed.topics.{}", l + 1), rows: k, cols: d, init: Init::Embedding, trainable: true });
    }
    for l in 0..config.layers() {
        let fan_in = if l == 0 { vocab_size } else { h };
        mlp_specs(&mut s, &format!("enc.up.{}", l + 1), fan_in, h);
    }
    match config.mode {
        Mode::Hierarchical => {
            for (l, &k) in config.topics.iter().enumerate() {
                linear_specs(&mut s, &format!("enc.k.{}", l + 1), k + h, k);
                linear_specs(&mut s, &format!("enc.t.{}", l + 1), k + h, k);
            }
        }
        Mode::Flat => {
            let k = config.topics[0];
            linear_specs(&mut s, "enc.mu", h, k);
            linear_specs(&mut s, "enc.logvar", h, k);
        }
    }
    s
}

impl Model {
    /// Creates a freshly initialized parameter store and its layout.
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<(Model, ParamStore)> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::config("vocabulary is empty"));
        }
        let mut store = ParamStore::new();
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        for (i, spec) in param_specs(&config, vocab_size).into_iter().enumerate() {
            let mut r = rng::stream(seed, rng::PURPOSE_INIT, i as u64);
            let value = match spec.init {
                Init::Embedding => Matrix::from_fn(spec.rows, spec.cols, |_, _| normal.sample(&mut r)),
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / libm::sqrt(fan_in as f64);
                    let u = Uniform::new(-bound, bound).expect("valid bounds");
                    Matrix::from_fn(spec.rows, spec.cols, |_, _| u.sample(&mut r))
                }
                Init::Zeros => Matrix::zeros(spec.rows, spec.cols),
                Init::Ones => Matrix::filled(spec.rows, spec.cols, 1.0),
            };
            store.insert(&spec.name, value, spec.trainable)?;
        }
        store.round_to_f32();
        let model = Model::bind(config, vocab_size, &store)?;
        Ok((model, store))
    }

    /// Looks up every parameter of the layout in an existing store, checking
    /// names and shapes.
    pub fn bind(config: ModelConfig, vocab_size: usize, store: &ParamStore) -> Result<Model> {
        config.validate()?;
        let specs = param_specs(&config, vocab_size);
        for spec in &specs {
            let id = store
                .id(&spec.name)
                .ok_or_else(|| Error::validation(format!("missing parameter `{}`", spec.name)))?;
            let p = store.param(id);
            if p.value().shape() != (spec.rows, spec.cols) {
                return Err(Error::validation(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    spec.name,
                    p.value().shape(),
                    (spec.rows, spec.cols)
                )));
            }
            if p.trainable() != spec.trainable {
                return Err(Error::validation(format!("parameter `{}` has the wrong trainable flag", spec.name)));
            }
        }
        if store.len() != specs.len() {
            return Err(Error::validation(format!(
                "store holds {} parameters, layout expects {}",
                store.len(),
                specs.len()
            )));
        }
        let id = |n: &str| store.id(n).expect("checked above");
        let lin = |n: &str| Linear { w: id(&format!("{n}.w")), b: id(&format!("{n}.b")) };
        let mlp = |n: &str| Mlp {
            fc1: lin(&format!("{n}.fc1")),
            bn: BatchNormIds {
                gamma: id(&format!("{n}.bn.gamma")),
                beta: id(&format!("{n}.bn.beta")),
                mean: id(&format!("{n}.bn.mean")),
                var: id(&format!("{n}.bn.var")),
            },
            fc2: lin(&format!("{n}.fc2")),
        };
        let layers = config.layers();
        let heads = match config.mode {
            Mode::Hierarchical => Heads::Hierarchical {
                k: (1..=layers).map(|l| lin(&format!("enc.k.{l}"))).collect(),
                t: (1..=layers).map(|l| lin(&format!("enc.t.{l}"))).collect(),
            },
            Mode::Flat => Heads::Flat { mu: lin("enc.mu"), logvar: lin("enc.logvar") },
        };
        Ok(Model {
            words: id("embed.words"),
            topics: (1..=layers).map(|l| id(&format!("embed.topics.{l}"))).collect(),
            up: (1..=layers).map(|l| mlp(&format!("enc.up.{l}"))).collect(),
            heads,
            vocab_size,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn word_param(&self) -> ParamId {
        self.words
    }

    pub fn topic_params(&self) -> &[ParamId] {
        &self.topics
    }

    /// Tangent parameters of all embeddings.
    pub fn embedding_set(&self, store: &ParamStore) -> EmbeddingSet {
        EmbeddingSet {
            words: store.get(self.words).clone(),
            topics: self.topics.iter().map(|&id| store.get(id).clone()).collect(),
        }
    }

    /// Φ⁽¹⁾ … Φ⁽ᴸ⁾ for the current parameters.
    pub fn phis(&self, store: &ParamStore) -> Vec<Matrix> {
        let emb = self.embedding_set(store);
        (1..=self.config.layers())
            .map(|l| compute_phi(l, &emb, self.config.space).expect("layer in range"))
            .collect()
    }

    /// Maps embeddings onto the manifold and builds every Φ on the tape.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore) -> (Var, Vec<Var>, Vec<Var>) {
        let space = self.config.space;
        let w = tape.param(store, self.words);
        let words = tape.expmap0(w, space);
        let topics: Vec<Var> = self
            .topics
            .iter()
            .map(|&id| {
                let t = tape.param(store, id);
                tape.expmap0(t, space)
            })
            .collect();
        let mut phis = Vec::with_capacity(topics.len());
        for l in 0..topics.len() {
            let lower = if l == 0 { words } else { topics[l - 1] };
            let s = tape.pairwise_scores(lower, topics[l], space);
            phis.push(tape.softmax_cols(s));
        }
        (words, topics, phis)
    }

    fn linear(&self, tape: &mut Tape, store: &ParamStore, lin: Linear, x: Var) -> Var {
        let w = tape.param(store, lin.w);
        let b = tape.param(store, lin.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn mlp(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mlp: Mlp,
        input: MlpInput,
        train: bool,
        bn_nodes: &mut Vec<(Var, BatchNormIds)>,
    ) -> Var {
        let w1 = tape.param(store, mlp.fc1.w);
        let b1 = tape.param(store, mlp.fc1.b);
        let z = match input {
            MlpInput::Sparse(x) => tape.sparse_matmul(x, w1),
            MlpInput::Dense(v) => tape.matmul(v, w1),
        };
        let z = tape.add_row(z, b1);
        let g = tape.param(store, mlp.bn.gamma);
        let b = tape.param(store, mlp.bn.beta);
        let z = if train {
            let n = tape.batch_norm(z, g, b);
            bn_nodes.push((n, mlp.bn));
            n
        } else {
            let mean = store.get(mlp.bn.mean).data().to_vec();
            let var = store.get(mlp.bn.var).data().to_vec();
            tape.batch_norm_eval(z, g, b, &mean, &var)
        };
        let z = tape.relu(z);
        let z = self.linear(tape, store, mlp.fc2, z);
        tape.relu(z)
    }

    /// Deterministic upward features h⁽¹⁾ … h⁽ᴸ⁾.
    fn upward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &SparseRows,
        train: bool,
        bn_nodes: &mut Vec<(Var, BatchNormIds)>,
    ) -> Vec<Var> {
        let input = x.map_values(libm::log1p);
        let mut hs = Vec::with_capacity(self.up.len());
        let h1 = self.mlp(tape, store, self.up[0], MlpInput::Sparse(input), train, bn_nodes);
        hs.push(h1);
        for l in 1..self.up.len() {
            let prev = hs[l - 1];
            let delta = self.mlp(tape, store, self.up[l], MlpInput::Dense(prev), train, bn_nodes);
            hs.push(tape.add(prev, delta));
        }
        hs
    }

    /// Top-down Weibull posteriors. Returns per layer (k, t, θ, prior shape),
    /// layer 1 first.
    fn top_down(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        hs: &[Var],
        phis: &[Var],
        mode: &mut ThetaMode<'_>,
    ) -> Vec<(Var, Var, Var, Var)> {
        let Heads::Hierarchical { k: k_heads, t: t_heads } = &self.heads else {
            unreachable!("top_down is only used in hierarchical mode")
        };
        let layers = self.config.layers();
        let batch = tape.value(hs[0]).rows();
        let mut out: Vec<Option<(Var, Var, Var, Var)>> = (0..layers).map(|_| None).collect();
        let mut theta_above: Option<Var> = None;
        for l in (0..layers).rev() {
            let alpha = match theta_above {
                None => {
                    let g = &self.config.gamma;
                    tape.constant(Matrix::from_fn(batch, g.len(), |_, j| g[j]))
                }
                Some(th) => {
                    let shape = tape.matmul_nt(th, phis[l + 1]);
                    tape.clamp(shape, RATE_FLOOR, f64::INFINITY)
                }
            };
            let input = tape.concat_cols(alpha, hs[l]);
            let k = self.linear(tape, store, k_heads[l], input);
            let k = tape.softplus(k);
            let k = tape.clamp(k, SHAPE_RANGE.0, SHAPE_RANGE.1);
            let t = self.linear(tape, store, t_heads[l], input);
            let t = tape.softplus(t);
            let t = tape.clamp(t, SCALE_FLOOR, f64::INFINITY);
            let theta = match mode {
                ThetaMode::Sample(r) => {
                    let kl = self.config.topics[l];
                    let u = Matrix::from_fn(batch, kl, |_, _| rng::open_unit(*r));
                    tape.weibull_sample(k, t, &u)
                }
                ThetaMode::Mean => {
                    let kv = tape.value(k).clone();
                    let tv = tape.value(t).data().to_vec();
                    let mut i = 0;
                    let m = kv.map(|kk| {
                        let v = weibull_mean(kk, tv[i]);
                        i += 1;
                        v
                    });
                    tape.constant(m)
                }
            };
            out[l] = Some((k, t, theta, alpha));
            theta_above = Some(theta);
        }
        out.into_iter().map(|o| o.expect("every layer visited")).collect()
    }

    /// Builds the batch-mean negative ELBO for a batch of count vectors.
    /// `train` selects batch statistics for batch norm.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &SparseRows, rng: &mut StreamRng, train: bool) -> Forward {
        assert_eq!(x.cols, self.vocab_size, "batch vocabulary width mismatch");
        let batch = x.rows().max(1) as f64;
        let (words, topics, phis) = self.embed(tape, store);
        let mut bn = Vec::new();
        let hs = self.upward(tape, store, x, train, &mut bn);
        let samples = self.config.mc_samples;
        let mut terms = Vec::new();
        let mut ll_total = 0.0;
        let mut kl_total = 0.0;
        for _ in 0..samples {
            let (ll, kl) = match &self.heads {
                Heads::Hierarchical { .. } => {
                    let layers = self.top_down(tape, store, &hs, &phis, &mut ThetaMode::Sample(rng));
                    let ll = tape.count_log_lik(layers[0].2, phis[0], x.clone(), RATE_FLOOR, true);
                    let ll = tape.sum(ll);
                    let mut kl_sum: Option<Var> = None;
                    for (l, &(k, t, _, alpha)) in layers.iter().enumerate() {
                        let kl = tape.kl_weibull_gamma(k, t, alpha, self.config.prior_rate(l));
                        let s = tape.sum(kl);
                        kl_sum = Some(match kl_sum {
                            None => s,
                            Some(acc) => tape.add(acc, s),
                        });
                    }
                    (ll, kl_sum.expect("at least one layer"))
                }
                Heads::Flat { mu, logvar } => {
                    let h = hs[0];
                    let mu = self.linear(tape, store, *mu, h);
                    let lv = self.linear(tape, store, *logvar, h);
                    let half = tape.scale(lv, 0.5);
                    let sd = tape.exp(half);
                    let (r, c) = tape.value(mu).shape();
                    let eps = Matrix::from_fn(r, c, |_, _| rng::standard_normal(rng));
                    let eps = tape.constant(eps);
                    let noise = tape.mul(sd, eps);
                    let z = tape.add(mu, noise);
                    let theta = tape.softmax_rows(z);
                    let ll = tape.count_log_lik(theta, phis[0], x.clone(), RATE_FLOOR, false);
                    let ll = tape.sum(ll);
                    let kl = tape.gaussian_kl(mu, lv);
                    (ll, tape.sum(kl))
                }
            };
            ll_total += tape.scalar(ll);
            kl_total += tape.scalar(kl);
            terms.push(tape.sub(kl, ll));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t);
        }
        let denom = batch * samples as f64;
        let neg_elbo = tape.scale(total, 1.0 / denom);
        Forward { neg_elbo, log_lik: ll_total / denom, kl: kl_total / denom, words, topics, phis, bn }
    }

    /// Folds the batch statistics recorded during a training forward pass
    /// into the running averages.
    pub fn update_running_stats(&self, fwd: &Forward, tape: &Tape, store: &mut ParamStore) {
        for &(node, ids) in &fwd.bn {
            let (mean, var) = tape.batch_stats(node).expect("training-mode batch norm node");
            let n = tape.value(node).rows() as f64;
            let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let rm = store.value_mut(ids.mean);
            for (r, m) in rm.data_mut().iter_mut().zip(mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let rv = store.value_mut(ids.var);
            for (r, v) in rv.data_mut().iter_mut().zip(var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction;
            }
        }
    }

    /// Encodes a batch. With `rng` the θ are single Weibull draws (flat mode:
    /// logistic-normal draws); without it they are posterior means (flat
    /// mode: softmax of μ). Batch norm uses running statistics.
    pub fn encode(&self, store: &ParamStore, x: &SparseRows, rng: Option<&mut StreamRng>) -> LatentState {
        let mut tape = Tape::new();
        let (_, _, phis) = self.embed(&mut tape, store);
        let mut bn = Vec::new();
        let hs = self.upward(&mut tape, store, x, false, &mut bn);
        let h: Vec<Matrix> = hs.iter().map(|&v| tape.value(v).clone()).collect();
        match &self.heads {
            Heads::Hierarchical { .. } => {
                let layers = match rng {
                    Some(r) => self.top_down(&mut tape, store, &hs, &phis, &mut ThetaMode::Sample(r)),
                    None => self.top_down(&mut tape, store, &hs, &phis, &mut ThetaMode::Mean),
                };
                LatentState {
                    k: layers.iter().map(|l| tape.value(l.0).clone()).collect(),
                    t: layers.iter().map(|l| tape.value(l.1).clone()).collect(),
                    theta: layers.iter().map(|l| tape.value(l.2).clone()).collect(),
                    h,
                }
            }
            Heads::Flat { mu, logvar } => {
                let mu_v = self.linear(&mut tape, store, *mu, hs[0]);
                let lv_v = self.linear(&mut tape, store, *logvar, hs[0]);
                let mu_m = tape.value(mu_v).clone();
                let z = match rng {
                    Some(r) => {
                        let lv = tape.value(lv_v);
                        Matrix::from_fn(mu_m.rows(), mu_m.cols(), |i, j| {
                            mu_m.get(i, j) + libm::exp(0.5 * lv.get(i, j)) * rng::standard_normal(r)
                        })
                    }
                    None => mu_m.clone(),
                };
                let zv = tape.constant(z);
                let theta = tape.softmax_rows(zv);
                LatentState {
                    k: vec![mu_m],
                    t: vec![tape.value(lv_v).clone()],
                    theta: vec![tape.value(theta).clone()],
                    h,
                }
            }
        }
    }

    /// Posterior-mean θ⁽¹⁾ for every row of `x`, processed in chunks.
    pub fn infer_theta(&self, store: &ParamStore, x: &SparseRows, chunk: usize) -> Matrix {
        let chunk = chunk.max(1);
        let k = self.config.topics[0];
        let mut data = Vec::with_capacity(x.rows() * k);
        let mut start = 0;
        while start < x.rows() {
            let end = (start + chunk).min(x.rows());
            let mut part = SparseRows::new(x.cols);
            for i in start..end {
                part.push_row(x.row(i));
            }
            let state = self.encode(store, &part, None);
            data.extend_from_slice(state.theta[0].data());
            start = end;
        }
        Matrix::from_vec(x.rows(), k, data).expect("shape preserved")
    }

    /// Parameter names in layout order.
    pub fn param_names(&self) -> Vec<String> {
        param_specs(&self.config, self.vocab_size).into_iter().map(|s| s.name.to_string()).collect()
    }
}

enum MlpInput {
    Sparse(SparseRows),
    Dense(Var),
}
