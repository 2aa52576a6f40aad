//! Planted two-layer topic hierarchies for recovery experiments.
//!
//! Parents mix their own children; every child owns a contiguous block of
//! words whose weights decay geometrically with rank. Documents follow the
//! Poisson–Gamma generative process top-down:
//! `θ⁽²⁾ ~ Gamma(γ, 1)`, `θ⁽¹⁾ ~ Gamma(Φ⁽²⁾θ⁽²⁾, 1)`, `x ~ Poisson(s·Φ⁽¹⁾θ⁽¹⁾)`.

use anyhow::{ensure, Result};
use hypertopic_core::corpus::{BowCorpus, BowDocument, Split, Vocabulary};
use hypertopic_core::eval::TopicSet;
use hypertopic_core::matrix::Matrix;
use hypertopic_core::rng;
use hypertopic_core::taxonomy::{parse_hypernym_paths, ConceptTaxonomy};
use rand_distr::{Distribution, Gamma, Poisson};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub vocab_size: usize,
    pub docs: usize,
    pub parents: usize,
    pub children_per_parent: usize,
    /// Expected tokens per unit of θ⁽¹⁾ mass.
    pub doc_scale: f64,
    /// Share of a child topic spread uniformly over the vocabulary.
    pub child_noise: f64,
    /// Share of a parent spread uniformly over all children.
    pub parent_noise: f64,
    /// Ratio between consecutive word weights inside a block.
    pub decay: f64,
    pub gamma_shape: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            vocab_size: 300,
            docs: 2000,
            parents: 3,
            children_per_parent: 3,
            doc_scale: 30.0,
            child_noise: 0.05,
            parent_noise: 0.1,
            decay: 0.85,
            gamma_shape: 1.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

pub struct Planted {
    pub corpus: BowCorpus,
    pub taxonomy: ConceptTaxonomy,
    /// Hypernym-path text (`word<TAB>child>parent`) the taxonomy was built
    /// from.
    pub hypernym_paths: String,
    /// V × children.
    pub phi1: Matrix,
    /// children × parents.
    pub phi2: Matrix,
}

impl Planted {
    /// Child topics ranked by planted weight.
    pub fn child_topics(&self, n: usize) -> TopicSet {
        TopicSet::from_topic_word(&self.phi1, n)
    }

    pub fn parent_topics(&self, n: usize) -> TopicSet {
        TopicSet::from_topic_word(&self.phi1.matmul(&self.phi2), n)
    }

    /// Model topic counts, layer 1 first.
    pub fn topics(&self) -> Vec<usize> {
        vec![self.phi1.cols(), self.phi2.cols()]
    }
}

pub fn word_name(i: usize) -> String {
    format!("w{i:03}")
}

pub fn generate(cfg: &PlantedConfig) -> Result<Planted> {
    let k1 = cfg.parents * cfg.children_per_parent;
    ensure!(cfg.parents > 0 && cfg.children_per_parent > 0, "need at least one parent and child");
    ensure!(cfg.vocab_size >= k1, "vocabulary smaller than the number of child topics");
    ensure!(cfg.docs >= 2, "need at least two documents");
    ensure!(cfg.doc_scale > 0.0 && cfg.gamma_shape > 0.0, "scale and shape must be positive");
    ensure!((0.0..1.0).contains(&cfg.test_fraction), "test fraction must be in [0, 1)");
    let v = cfg.vocab_size;
    let block = v / k1;
    let uniform_v = 1.0 / v as f64;
    let mut phi1 = Matrix::zeros(v, k1);
    for c in 0..k1 {
        let weights: Vec<f64> = (0..block).map(|r| cfg.decay.powi(r as i32)).collect();
        let total: f64 = weights.iter().sum();
        for w in 0..v {
            phi1.set(w, c, cfg.child_noise * uniform_v);
        }
        for (r, wt) in weights.iter().enumerate() {
            let w = c * block + r;
            phi1.set(w, c, phi1.get(w, c) + (1.0 - cfg.child_noise) * wt / total);
        }
    }
    let mut phi2 = Matrix::filled(k1, cfg.parents, cfg.parent_noise / k1 as f64);
    for p in 0..cfg.parents {
        for j in 0..cfg.children_per_parent {
            let c = p * cfg.children_per_parent + j;
            phi2.set(c, p, phi2.get(c, p) + (1.0 - cfg.parent_noise) / cfg.children_per_parent as f64);
        }
    }

    let top_prior = Gamma::new(cfg.gamma_shape, 1.0)?;
    let mut docs = Vec::with_capacity(cfg.docs);
    let mut r = rng::stream(cfg.seed, 0x5e, 0);
    while docs.len() < cfg.docs {
        let theta2: Vec<f64> = (0..cfg.parents).map(|_| top_prior.sample(&mut r)).collect();
        let mut theta1 = vec![0.0; k1];
        for (c, t) in theta1.iter_mut().enumerate() {
            let shape: f64 = (0..cfg.parents).map(|p| phi2.get(c, p) * theta2[p]).sum();
            *t = Gamma::new(shape.max(1e-6), 1.0)?.sample(&mut r);
        }
        let mut counts = Vec::new();
        for w in 0..v {
            let rate: f64 = cfg.doc_scale * (0..k1).map(|c| phi1.get(w, c) * theta1[c]).sum::<f64>();
            if rate > 0.0 {
                let n = Poisson::new(rate)?.sample(&mut r) as u32;
                if n > 0 {
                    counts.push((w, n));
                }
            }
        }
        if counts.is_empty() {
            continue;
        }
        let label = (0..cfg.parents).max_by(|&a, &b| theta2[a].total_cmp(&theta2[b])).expect("parents > 0");
        docs.push(BowDocument::from_counts(counts, Some(label)));
    }
    let n_test = ((cfg.docs as f64) * cfg.test_fraction).round() as usize;
    let splits = (0..cfg.docs).map(|i| if i + n_test < cfg.docs { Split::Train } else { Split::Test }).collect();
    let vocab = Vocabulary::new((0..v).map(word_name).collect())?;
    let label_names = (0..cfg.parents).map(|p| format!("parent{p}")).collect();
    let corpus = BowCorpus::new(vocab, docs, Some(splits), Some(label_names))?;

    let mut hypernym_paths = String::new();
    for c in 0..k1 {
        let p = c / cfg.children_per_parent;
        for w in c * block..(c + 1) * block {
            hypernym_paths.push_str(&format!("{}\tchild{c}>parent{p}\n", word_name(w)));
        }
    }
    let paths = parse_hypernym_paths(&hypernym_paths)?;
    let (taxonomy, _) = ConceptTaxonomy::build_from_hypernym_paths(&paths, corpus.vocab(), 2)?;
    Ok(Planted { corpus, taxonomy, hypernym_paths, phi1, phi2 })
}
