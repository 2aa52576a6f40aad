//! Concept taxonomies built from hypernym paths, and the neighbour
//! structure used to pick positives and negatives for the contrastive term.
//!
//! Taxonomy layers are numbered from the root side: layer 1 holds the most
//! general concepts and layer `depth` the concepts directly above the words.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::geometry::Space;
use crate::model::EmbeddingSet;

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConceptNode {
    pub id: usize,
    pub name: String,
    pub layer: usize,
    pub parent: Option<usize>,
}

/// A vocabulary word attached below a deepest-layer concept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Leaf {
    pub word_index: usize,
    pub parent: usize,
}

/// Either a concept (by id) or a vocabulary word (by index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Concept(usize),
    Word(usize),
}

/// One line of a hypernym paths file: a word and its concepts, nearest
/// first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HypernymPath {
    pub word: String,
    pub concepts: Vec<String>,
}

/// `<word>\t<concept>><concept>>...><root>` per line; blank lines are
/// skipped.
pub fn parse_hypernym_paths(text: &str) -> Result<Vec<HypernymPath>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (word, path) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "expected `<word>\\t<path>`"))?;
        let concepts: Vec<String> = path.split('>').map(|c| c.trim().to_string()).collect();
        if word.trim().is_empty() || concepts.iter().any(String::is_empty) {
            return Err(Error::parse(i + 1, "empty word or concept name"));
        }
        out.push(HypernymPath { word: word.trim().to_string(), concepts });
    }
    Ok(out)
}

/// Non-fatal findings while building a taxonomy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildWarning {
    UnknownWord(String),
    DuplicateWord(String),
    ShallowPath { word: String, length: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptTaxonomy {
    depth: usize,
    nodes: Vec<ConceptNode>,
    leaves: Vec<Leaf>,
    index: Index,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
struct Index {
    /// Concept ids per layer (layer 1 at position 0), in id order.
    layers: Vec<Vec<usize>>,
    /// Position of each concept within its layer.
    position: Vec<usize>,
    children: Vec<Vec<usize>>,
    words: Vec<Vec<usize>>,
    leaf_of: BTreeMap<usize, usize>,
}

/// Structure summary produced by [`ConceptTaxonomy::validate`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaxonomyReport {
    pub layer_sizes: Vec<usize>,
    pub leaves: usize,
    /// Fraction of the vocabulary attached as leaves.
    pub coverage: f64,
    /// Concepts with nothing below them.
    pub orphans: Vec<usize>,
}

impl ConceptTaxonomy {
    /// Checks structure and builds lookup tables. Errors list offending ids.
    pub fn new(depth: usize, nodes: Vec<ConceptNode>, leaves: Vec<Leaf>) -> Result<Self> {
        let mut problems = Vec::new();
        if depth == 0 {
            problems.push("depth must be at least 1".to_string());
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                problems.push(format!("node at position {i} has id {}", n.id));
                continue;
            }
            if n.layer == 0 || n.layer > depth {
                problems.push(format!("node {} has layer {} outside 1..={depth}", n.id, n.layer));
            }
            match n.parent {
                None if n.layer != 1 => problems.push(format!("node {} at layer {} has no parent", n.id, n.layer)),
                Some(p) if p >= nodes.len() => problems.push(format!("node {} has missing parent {p}", n.id)),
                Some(p) if nodes[p].layer + 1 != n.layer => {
                    problems.push(format!("node {} at layer {} has parent {p} at layer {}", n.id, n.layer, nodes[p].layer))
                }
                _ => {}
            }
        }
        let mut seen = BTreeSet::new();
        for l in &leaves {
            if !seen.insert(l.word_index) {
                problems.push(format!("word {} attached twice", l.word_index));
            }
            match nodes.get(l.parent) {
                None => problems.push(format!("word {} has missing parent {}", l.word_index, l.parent)),
                Some(p) if p.layer != depth => {
                    problems.push(format!("word {} attached to node {} at layer {}", l.word_index, p.id, p.layer))
                }
                _ => {}
            }
        }
        if !problems.is_empty() {
            return Err(Error::validation(problems.join("; ")));
        }
        let mut tax = ConceptTaxonomy { depth, nodes, leaves, index: Index::default() };
        tax.reindex();
        Ok(tax)
    }

    fn reindex(&mut self) {
        let n = self.nodes.len();
        let mut idx = Index {
            layers: vec![Vec::new(); self.depth],
            position: vec![0; n],
            children: vec![Vec::new(); n],
            words: vec![Vec::new(); n],
            leaf_of: BTreeMap::new(),
        };
        for node in &self.nodes {
            let layer = &mut idx.layers[node.layer - 1];
            idx.position[node.id] = layer.len();
            layer.push(node.id);
            if let Some(p) = node.parent {
                idx.children[p].push(node.id);
            }
        }
        for l in &self.leaves {
            idx.words[l.parent].push(l.word_index);
            idx.leaf_of.insert(l.word_index, l.parent);
        }
        self.index = idx;
    }

    /// Builds a `depth`-layer tree from hypernym paths. Each path is cut to
    /// the `depth` concepts nearest the root and the word attaches to the
    /// deepest kept concept. The first path listed for a word wins, and a
    /// concept keeps the parent of the first path that introduced it.
    /// Concepts are identified by name within a layer.
    pub fn build_from_hypernym_paths(
        paths: &[HypernymPath],
        vocab: &Vocabulary,
        depth: usize,
    ) -> Result<(ConceptTaxonomy, Vec<BuildWarning>)> {
        if depth == 0 {
            return Err(Error::config("taxonomy depth must be at least 1"));
        }
        let mut warnings = Vec::new();
        let mut nodes: Vec<ConceptNode> = Vec::new();
        let mut by_key: BTreeMap<(usize, String), usize> = BTreeMap::new();
        let mut leaves = Vec::new();
        let mut attached = BTreeSet::new();
        for (line, p) in paths.iter().enumerate() {
            let mut names = BTreeSet::new();
            for c in &p.concepts {
                if c == &p.word || !names.insert(c.as_str()) {
                    return Err(Error::validation(format!(
                        "cyclic hypernym path for `{}` (entry {}): `{c}` repeats",
                        p.word,
                        line + 1
                    )));
                }
            }
            let Some(w) = vocab.index_of(&p.word) else {
                warnings.push(BuildWarning::UnknownWord(p.word.clone()));
                continue;
            };
            if attached.contains(&w) {
                warnings.push(BuildWarning::DuplicateWord(p.word.clone()));
                continue;
            }
            if p.concepts.len() < depth {
                warnings.push(BuildWarning::ShallowPath { word: p.word.clone(), length: p.concepts.len() });
                continue;
            }
            let mut parent = None;
            for (j, name) in p.concepts.iter().rev().take(depth).enumerate() {
                let key = (j + 1, name.clone());
                let id = match by_key.get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = nodes.len();
                        nodes.push(ConceptNode { id, name: name.clone(), layer: j + 1, parent });
                        by_key.insert(key, id);
                        id
                    }
                };
                parent = Some(id);
            }
            attached.insert(w);
            leaves.push(Leaf { word_index: w, parent: parent.expect("depth >= 1") });
        }
        let tax = ConceptTaxonomy::new(depth, nodes, leaves)?;
        Ok((tax, warnings))
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn node(&self, id: usize) -> &ConceptNode {
        &self.nodes[id]
    }

    /// Concept counts per layer, root side first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.index.layers.iter().map(Vec::len).collect()
    }

    /// Concept ids of `layer` (1-based), in order.
    pub fn layer(&self, layer: usize) -> &[usize] {
        &self.index.layers[layer - 1]
    }

    /// Position of a concept within its layer.
    pub fn position(&self, id: usize) -> usize {
        self.index.position[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.index.children[id]
    }

    /// Words attached directly below a concept.
    pub fn words_of(&self, id: usize) -> &[usize] {
        &self.index.words[id]
    }

    /// The concept a word is attached to, if covered.
    pub fn parent_of_word(&self, word: usize) -> Option<usize> {
        self.index.leaf_of.get(&word).copied()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    /// Every concept followed by every attached word.
    pub fn all_nodes(&self) -> Vec<NodeRef> {
        (0..self.nodes.len())
            .map(NodeRef::Concept)
            .chain(self.leaves.iter().map(|l| NodeRef::Word(l.word_index)))
            .collect()
    }

    /// One-hop neighbours: parent plus children (concepts), the parent
    /// concept (attached words), nothing for unattached words.
    pub fn positives_of(&self, node: NodeRef) -> Vec<NodeRef> {
        match node {
            NodeRef::Concept(id) => {
                let n = &self.nodes[id];
                let mut out: Vec<NodeRef> = n.parent.map(NodeRef::Concept).into_iter().collect();
                out.extend(self.children(id).iter().map(|&c| NodeRef::Concept(c)));
                out.extend(self.words_of(id).iter().map(|&w| NodeRef::Word(w)));
                out
            }
            NodeRef::Word(w) => self.parent_of_word(w).map(NodeRef::Concept).into_iter().collect(),
        }
    }

    /// The `m` taxonomy nodes outside `{anchor} ∪ positives_of(anchor)` with
    /// the highest similarity to the anchor, best first (ties by node order).
    /// Concepts of layer `j` are scored with row `position` of
    /// `emb.topics[depth − j]`, words with `emb.words`.
    pub fn negatives_of(&self, anchor: NodeRef, emb: &EmbeddingSet, space: Space, m: usize) -> Result<Vec<NodeRef>> {
        if emb.topics.len() != self.depth {
            return Err(Error::contract(format!(
                "embeddings have {} topic layers, taxonomy depth is {}",
                emb.topics.len(),
                self.depth
            )));
        }
        let point = |n: NodeRef| -> Vec<f64> {
            let mut out = vec![0.0; space.ambient_dim(emb.words.cols())];
            let row = match n {
                NodeRef::Concept(id) => emb.topics[self.depth - self.nodes[id].layer].row(self.position(id)),
                NodeRef::Word(w) => emb.words.row(w),
            };
            space.expmap0_raw(row, &mut out);
            out
        };
        let a = point(anchor);
        let excluded: BTreeSet<NodeRef> = self.positives_of(anchor).into_iter().chain([anchor]).collect();
        let all = self.all_nodes();
        let scores: Vec<(usize, f64)> = all
            .iter()
            .enumerate()
            .filter(|(_, n)| !excluded.contains(n))
            .map(|(i, &n)| (i, space.rank_key_raw(&a, &point(n))))
            .collect();
        Ok(top_by_score(scores, m).into_iter().map(|i| all[i]).collect())
    }

    /// Checks the tree against a vocabulary size and summarizes it.
    pub fn validate(&self, vocab_size: usize) -> Result<TaxonomyReport> {
        let bad: Vec<String> = self
            .leaves
            .iter()
            .filter(|l| l.word_index >= vocab_size)
            .map(|l| format!("word {} outside vocabulary of {vocab_size}", l.word_index))
            .collect();
        if !bad.is_empty() {
            return Err(Error::validation(bad.join("; ")));
        }
        let orphans = self
            .nodes
            .iter()
            .filter(|n| self.children(n.id).is_empty() && self.words_of(n.id).is_empty())
            .map(|n| n.id)
            .collect();
        Ok(TaxonomyReport {
            layer_sizes: self.layer_sizes(),
            leaves: self.leaves.len(),
            coverage: if vocab_size == 0 { 0.0 } else { self.leaves.len() as f64 / vocab_size as f64 },
            orphans,
        })
    }
}

/// Indices of the `m` highest scores, best first, ties by lower index.
pub fn top_by_score(mut scores: Vec<(usize, f64)>, m: usize) -> Vec<usize> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.truncate(m);
    scores.into_iter().map(|(i, _)| i).collect()
}
