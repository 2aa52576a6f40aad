//! Topic quality and document representation metrics: NPMI coherence,
//! topic diversity, k-means purity/NMI on θ⁽¹⁾, linear classification
//! accuracy and one-to-one topic matching.

mod classify;
mod cluster;
mod coherence;
mod matching;

pub use classify::{classify_linear, LinearClassifier, LinearConfig};
pub use cluster::{kmeans, nmi, purity, KMeans};
pub use coherence::{npmi, select_top_half, topic_diversity, DocIndex, NpmiScores, TopicSet};
pub use matching::{hungarian, topic_overlap, TopicMatch};

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{BowCorpus, Split};
use crate::error::{Error, Result};
use crate::geometry::{lorentz_to_poincare_raw, Space};
use crate::grad::ParamStore;
use crate::matrix::{norm_sq, Matrix};
use crate::model::{topic_word_matrix, EmbeddingSet, Model};

pub const NPMI_TOP_N: usize = 10;
pub const DIVERSITY_TOP_N: usize = 25;
pub const KMEANS_MAX_ITER: usize = 300;

/// Coherence and diversity of one topic layer.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerMetrics {
    pub layer: usize,
    pub topics: usize,
    pub npmi: f64,
    pub npmi_top_half: f64,
    pub npmi_per_topic: Vec<f64>,
    /// `None` when the vocabulary is smaller than the diversity cut-off.
    pub diversity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub layers: Vec<LayerMetrics>,
    pub km_purity: Option<f64>,
    pub km_nmi: Option<f64>,
    pub accuracy: Option<f64>,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub clustering: bool,
    pub classification: bool,
    pub seed: u64,
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { clustering: true, classification: true, seed: 0, chunk: 500 }
    }
}

/// NPMI and diversity for every layer of a trained model, with the whole
/// corpus as the reference collection.
pub fn layer_metrics(model: &Model, store: &ParamStore, corpus: &BowCorpus) -> Result<Vec<LayerMetrics>> {
    let phis = model.phis(store);
    let v = corpus.vocab().len();
    let index = DocIndex::new(corpus.docs(), v);
    let keep = NPMI_TOP_N.max(DIVERSITY_TOP_N).min(v);
    let mut out = Vec::with_capacity(phis.len());
    for l in 1..=phis.len() {
        let topics = TopicSet::from_topic_word(&topic_word_matrix(&phis, l)?, keep);
        let scores = npmi(&topics, &index, NPMI_TOP_N.min(v))?;
        let half = select_top_half(&scores.per_topic);
        let npmi_top_half = half.iter().map(|&i| scores.per_topic[i]).sum::<f64>() / half.len() as f64;
        let diversity = if v >= DIVERSITY_TOP_N { Some(topic_diversity(&topics, DIVERSITY_TOP_N)?) } else { None };
        out.push(LayerMetrics {
            layer: l,
            topics: topics.len(),
            npmi: scores.mean,
            npmi_top_half,
            npmi_per_topic: scores.per_topic,
            diversity,
        });
    }
    Ok(out)
}

/// The full report. Clustering runs on the test split (all documents when
/// there is none) with k = number of label classes; classification fits on
/// the training split and scores the test split.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    corpus: &BowCorpus,
    options: EvalOptions,
    config_digest: String,
) -> Result<MetricReport> {
    let layers = layer_metrics(model, store, corpus)?;
    let theta_of = |idx: &[usize]| model.infer_theta(store, &corpus.batch(idx), options.chunk);
    let test = corpus.test_indices();
    let mut report =
        MetricReport { layers, km_purity: None, km_nmi: None, accuracy: None, seed: options.seed, config_digest };
    if options.clustering {
        let idx = if test.is_empty() { (0..corpus.len()).collect() } else { test.clone() };
        let labels = corpus.labels(&idx)?;
        let k = labels.iter().collect::<alloc::collections::BTreeSet<_>>().len();
        let km = kmeans(&theta_of(&idx), k, options.seed, KMEANS_MAX_ITER)?;
        report.km_purity = Some(purity(&km.assignments, &labels)?);
        report.km_nmi = Some(nmi(&km.assignments, &labels)?);
    }
    if options.classification {
        if test.is_empty() {
            return Err(Error::Validation("classification needs a test split".into()));
        }
        let train = corpus.indices(Split::Train);
        let cfg = LinearConfig { seed: options.seed, ..LinearConfig::default() };
        report.accuracy = Some(classify_linear(
            &theta_of(&train),
            &corpus.labels(&train)?,
            &theta_of(&test),
            &corpus.labels(&test)?,
            cfg,
        )?);
    }
    Ok(report)
}

/// One exported embedding point.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordRow {
    /// 0 for words, otherwise the topic layer.
    pub layer: usize,
    pub index: usize,
    pub coords: Vec<f64>,
    pub norm: f64,
}

/// Manifold coordinates of every word and topic (words first). Lorentz
/// points are given in Poincaré-ball coordinates.
pub fn embedding_coords(emb: &EmbeddingSet, space: Space) -> Vec<CoordRow> {
    let mut out = Vec::new();
    for l in 0..=emb.topics.len() {
        let pts = emb.points(l, space);
        for i in 0..pts.rows() {
            let coords = match space {
                Space::Lorentz(c) => lorentz_to_poincare_raw(c, pts.row(i)),
                _ => pts.row(i).to_vec(),
            };
            let norm = libm::sqrt(norm_sq(&coords));
            out.push(CoordRow { layer: l, index: i, coords, norm });
        }
    }
    out
}

/// Top words of every topic of layer `level`.
pub fn layer_topics(phis: &[Matrix], level: usize, n: usize) -> Result<TopicSet> {
    Ok(TopicSet::from_topic_word(&topic_word_matrix(phis, level)?, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BowDocument;
    use alloc::vec;

    fn doc(words: &[usize]) -> BowDocument {
        BowDocument::from_counts(words.iter().map(|&w| (w, 1)), None)
    }

    fn set(topics: &[&[usize]], v: usize) -> TopicSet {
        TopicSet::new(topics.iter().map(|t| t.iter().map(|&w| (w, 1.0)).collect()).collect(), v).unwrap()
    }

    #[test]
    fn npmi_examples() {
        let docs = [doc(&[0, 1]), doc(&[0, 1]), doc(&[0, 2])];
        let idx = DocIndex::new(&docs, 4);
        assert_eq!(idx.npmi_pair(0, 1), 0.0);
        assert_eq!(idx.npmi_pair(1, 2), -1.0);
        assert_eq!(idx.npmi_pair(1, 3), -1.0);
        let docs = [doc(&[0, 1]), doc(&[2]), doc(&[0, 1]), doc(&[3])];
        let idx = DocIndex::new(&docs, 4);
        assert!((idx.npmi_pair(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(idx.npmi_pair(0, 1), idx.npmi_pair(1, 0));
    }

    #[test]
    fn diversity_examples() {
        let a: Vec<usize> = (0..25).collect();
        let b: Vec<usize> = (25..50).collect();
        assert_eq!(topic_diversity(&set(&[&a, &b], 100), 25).unwrap(), 1.0);
        assert_eq!(topic_diversity(&set(&[&a, &a], 100), 25).unwrap(), 0.5);
        let mut t = Vec::new();
        for k in 0..3 {
            let mut w = vec![0];
            w.extend(1 + 24 * k..1 + 24 * (k + 1));
            t.push(w);
        }
        let refs: Vec<&[usize]> = t.iter().map(Vec::as_slice).collect();
        assert_eq!(topic_diversity(&set(&refs, 100), 25).unwrap(), 73.0 / 75.0);
    }

    #[test]
    fn top_half_selection() {
        assert_eq!(select_top_half(&[0.1, 0.3, 0.2, 0.0]), vec![1, 2]);
        assert_eq!(select_top_half(&[0.5; 4]), vec![0, 1]);
        assert_eq!(select_top_half(&[0.0; 5]).len(), 3);
    }

    #[test]
    fn clustering_examples() {
        let x = Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 0.0], &[10.0, 1.0]]).unwrap();
        let km = kmeans(&x, 2, 3, 300).unwrap();
        assert_eq!(km.assignments[0], km.assignments[1]);
        assert_eq!(km.assignments[2], km.assignments[3]);
        assert_ne!(km.assignments[0], km.assignments[2]);
        let c = km.assignments[0];
        assert_eq!(km.centers.row(c), &[0.0, 0.5]);
        assert_eq!(km.centers.row(1 - c), &[10.0, 0.5]);
        let each = kmeans(&x, 4, 0, 300).unwrap();
        assert_eq!(*each.wcss.last().unwrap(), 0.0);
        assert_eq!(purity(&[0, 0, 0, 1, 1, 1], &[7, 7, 8, 8, 8, 7]).unwrap(), 4.0 / 6.0);
        assert_eq!(nmi(&[0, 0, 0, 0], &[1, 2, 1, 2]).unwrap(), 0.0);
        assert!((nmi(&[3, 3, 5], &[0, 0, 1]).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmi(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn matching_recovers_permutation() {
        let cost = Matrix::from_rows(&[&[4.0, 1.0, 3.0], &[2.0, 0.0, 5.0], &[3.0, 2.0, 2.0]]).unwrap();
        assert_eq!(hungarian(&cost).unwrap(), vec![1, 0, 2]);
        let a = set(&[&[0, 1], &[2, 3]], 6);
        let b = set(&[&[4, 5], &[2, 5], &[0, 1]], 6);
        let m = topic_overlap(&a, &b, 2).unwrap();
        assert_eq!(m.assignment, vec![2, 1]);
        assert_eq!(m.overlaps, vec![1.0, 0.5]);
    }

    #[test]
    fn separable_classes_are_learned() {
        let x = Matrix::from_fn(40, 2, |i, j| if j == 0 { if i % 2 == 0 { -1.0 } else { 1.0 } } else { (i as f64) * 0.01 });
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let acc = classify_linear(&x, &y, &x, &y, LinearConfig::default()).unwrap();
        assert_eq!(acc, 1.0);
        assert!(matches!(
            LinearClassifier::fit(&x, &vec![0; 40], LinearConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }
}
