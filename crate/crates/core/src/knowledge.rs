//! The taxonomy-guided contrastive regularizer and the combined objective.
//!
//! All taxonomy nodes are laid out as rows of one node table on the tape:
//! topic points of model layers 1..L followed by the word points. A concept
//! of taxonomy layer `j` (root side first) is topic row `position` of model
//! layer `L − j + 1`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Space;
use crate::grad::{InfoNceTerm, Tape, Var};
use crate::matrix::Matrix;
use crate::model::EmbeddingSet;
use crate::rng::StreamRng;
use crate::taxonomy::{top_by_score, ConceptTaxonomy, NodeRef};

/// Row layout of taxonomy nodes and their one-hop neighbourhoods.
#[derive(Clone, Debug)]
pub struct NodeTable {
    nodes: Vec<NodeRef>,
    /// Table row of every taxonomy node, aligned with `nodes`.
    rows: Vec<usize>,
    /// Per node: table rows of its positives.
    positives: Vec<Vec<usize>>,
    /// Per node: sorted node positions excluded from its negatives.
    excluded: Vec<Vec<usize>>,
    topic_offsets: Vec<usize>,
    word_offset: usize,
}

/// Checks that model layer sizes (layer 1 first) mirror the taxonomy's
/// layer sizes (root first).
pub fn check_layer_sizes(taxonomy: &ConceptTaxonomy, topics: &[usize]) -> Result<()> {
    let mut expected = taxonomy.layer_sizes();
    expected.reverse();
    if expected != topics {
        return Err(Error::config(format!(
            "topic counts {topics:?} (layer 1 first) do not match taxonomy layer sizes {expected:?}"
        )));
    }
    Ok(())
}

impl NodeTable {
    pub fn new(taxonomy: &ConceptTaxonomy, topics: &[usize]) -> Result<Self> {
        check_layer_sizes(taxonomy, topics)?;
        let depth = taxonomy.depth();
        let mut topic_offsets = Vec::with_capacity(topics.len());
        let mut off = 0;
        for &k in topics {
            topic_offsets.push(off);
            off += k;
        }
        let word_offset = off;
        let nodes = taxonomy.all_nodes();
        let row_of = |n: NodeRef| match n {
            NodeRef::Concept(id) => topic_offsets[depth - taxonomy.node(id).layer] + taxonomy.position(id),
            NodeRef::Word(w) => word_offset + w,
        };
        let rows: Vec<usize> = nodes.iter().map(|&n| row_of(n)).collect();
        let position: alloc::collections::BTreeMap<NodeRef, usize> =
            nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut positives = Vec::with_capacity(nodes.len());
        let mut excluded = Vec::with_capacity(nodes.len());
        for (i, &n) in nodes.iter().enumerate() {
            let pos = taxonomy.positives_of(n);
            let mut ex: Vec<usize> = pos.iter().map(|p| position[p]).collect();
            ex.push(i);
            ex.sort_unstable();
            positives.push(pos.iter().map(|&p| row_of(p)).collect());
            excluded.push(ex);
        }
        Ok(NodeTable { nodes, rows, positives, excluded, topic_offsets, word_offset })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    /// Number of nodes with at least one positive.
    pub fn num_anchors(&self) -> usize {
        self.positives.iter().filter(|p| !p.is_empty()).count()
    }

    /// Stacks topic points (layer 1 first) and word points into the table.
    pub fn assemble(&self, tape: &mut Tape, words: Var, topics: &[Var]) -> Var {
        let mut parts: Vec<Var> = topics.to_vec();
        parts.push(words);
        tape.concat_rows(&parts)
    }

    /// The same table built from mapped embedding values.
    pub fn assemble_points(&self, emb: &EmbeddingSet, space: Space) -> Matrix {
        let mut data = Vec::new();
        let mut rows = 0;
        for l in 0..emb.topics.len() {
            let p = emb.points(l + 1, space);
            rows += p.rows();
            data.extend_from_slice(p.data());
        }
        let w = emb.points(0, space);
        rows += w.rows();
        data.extend_from_slice(w.data());
        let cols = if rows == 0 { 0 } else { data.len() / rows };
        debug_assert_eq!(self.topic_offsets.len(), emb.topics.len());
        debug_assert_eq!(self.word_offset + w.rows(), rows);
        Matrix::from_vec(rows, cols, data).expect("consistent widths")
    }

    /// Hard negatives of node `i`: the `m` most similar taxonomy nodes
    /// outside its one-hop neighbourhood, as table rows, best first.
    pub fn negatives(&self, i: usize, points: &Matrix, space: Space, m: usize) -> Vec<usize> {
        let a = points.row(self.rows[i]);
        let ex = &self.excluded[i];
        let scores: Vec<(usize, f64)> = (0..self.nodes.len())
            .filter(|j| ex.binary_search(j).is_err())
            .map(|j| (j, space.rank_key_raw(a, points.row(self.rows[j]))))
            .collect();
        top_by_score(scores, m).into_iter().map(|j| self.rows[j]).collect()
    }

    /// One term per anchor with a non-empty positive set: a positive drawn
    /// uniformly and the current hard negatives.
    pub fn sample_terms(&self, points: &Matrix, space: Space, m: usize, rng: &mut StreamRng) -> Vec<InfoNceTerm> {
        let mut terms = Vec::new();
        for (i, pos) in self.positives.iter().enumerate() {
            if pos.is_empty() {
                continue;
            }
            let positive = pos[rng.random_range(0..pos.len())];
            terms.push(InfoNceTerm { anchor: self.rows[i], positive, negatives: self.negatives(i, points, space, m) });
        }
        terms
    }

    /// Fraction of anchors whose mean distance to their positives is below
    /// their mean distance to the non-neighbour taxonomy nodes.
    pub fn separation(&self, points: &Matrix, space: Space) -> f64 {
        let mut anchors = 0usize;
        let mut good = 0usize;
        for (i, pos) in self.positives.iter().enumerate() {
            let ex = &self.excluded[i];
            let others: Vec<usize> =
                (0..self.nodes.len()).filter(|j| ex.binary_search(j).is_err()).map(|j| self.rows[j]).collect();
            if pos.is_empty() || others.is_empty() {
                continue;
            }
            let a = points.row(self.rows[i]);
            let mean = |rows: &[usize]| {
                rows.iter().map(|&r| space.distance_raw(a, points.row(r))).sum::<f64>() / rows.len() as f64
            };
            anchors += 1;
            if mean(pos) < mean(&others) {
                good += 1;
            }
        }
        if anchors == 0 {
            0.0
        } else {
            good as f64 / anchors as f64
        }
    }
}

/// Mean contrastive loss over `terms` on the tape.
pub fn contrastive_loss(tape: &mut Tape, table: Var, terms: Vec<InfoNceTerm>, tau: f64, space: Space) -> Var {
    tape.info_nce(table, terms, tau, space)
}

/// Contrastive loss of an embedding snapshot, sampling positives and
/// negatives as in training.
pub fn contrastive_value(
    emb: &EmbeddingSet,
    taxonomy: &ConceptTaxonomy,
    space: Space,
    tau: f64,
    m: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::config("tau must be positive"));
    }
    let topics: Vec<usize> = emb.topics.iter().map(Matrix::rows).collect();
    let table = NodeTable::new(taxonomy, &topics)?;
    let points = table.assemble_points(emb, space);
    let terms = table.sample_terms(&points, space, m, rng);
    let mut tape = Tape::new();
    let v = tape.constant(points);
    let loss = tape.info_nce(v, terms, tau, space);
    Ok(tape.scalar(loss))
}

/// The minimized objective `−elbo + λ·contrastive`.
pub fn total_loss(elbo: f64, contrastive: f64, lambda: f64) -> f64 {
    -elbo + lambda * contrastive
}
