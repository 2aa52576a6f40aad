use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::BowDocument;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Ranked word lists, one per topic, with their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicSet {
    topics: Vec<Vec<(usize, f64)>>,
}

impl TopicSet {
    pub fn new(topics: Vec<Vec<(usize, f64)>>, vocab_size: usize) -> Result<Self> {
        for (t, words) in topics.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &(w, _) in words {
                if w >= vocab_size || !seen.insert(w) {
                    return Err(Error::validation(format!("topic {t} has an invalid or repeated word {w}")));
                }
            }
        }
        Ok(TopicSet { topics })
    }

    /// Top `n` words of every column of a V×K topic-word matrix, heaviest
    /// first (ties by lower index).
    pub fn from_topic_word(m: &Matrix, n: usize) -> Self {
        let topics = (0..m.cols())
            .map(|j| {
                let mut col: Vec<(usize, f64)> = m.column(j).into_iter().enumerate().collect();
                col.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                col.truncate(n);
                col
            })
            .collect();
        TopicSet { topics }
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn topic(&self, i: usize) -> &[(usize, f64)] {
        &self.topics[i]
    }

    /// Word indices of topic `i`.
    pub fn words(&self, i: usize) -> Vec<usize> {
        self.topics[i].iter().map(|&(w, _)| w).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[(usize, f64)]> {
        self.topics.iter().map(Vec::as_slice)
    }

    /// The topics at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> TopicSet {
        TopicSet { topics: indices.iter().map(|&i| self.topics[i].clone()).collect() }
    }
}

/// Inverted index of document occurrences for co-occurrence counting.
#[derive(Clone, Debug)]
pub struct DocIndex {
    docs: Vec<Vec<u32>>,
    num_docs: usize,
}

impl DocIndex {
    pub fn new<'a>(docs: impl IntoIterator<Item = &'a BowDocument>, vocab_size: usize) -> Self {
        let mut lists = vec![Vec::new(); vocab_size];
        let mut n = 0u32;
        for d in docs {
            for &(w, _) in d.terms() {
                if w < vocab_size {
                    lists[w].push(n);
                }
            }
            n += 1;
        }
        DocIndex { docs: lists, num_docs: n as usize }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn doc_freq(&self, w: usize) -> usize {
        self.docs.get(w).map_or(0, Vec::len)
    }

    pub fn co_freq(&self, a: usize, b: usize) -> usize {
        let (Some(x), Some(y)) = (self.docs.get(a), self.docs.get(b)) else {
            return 0;
        };
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
                core::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// NPMI of a word pair from document frequencies. Pairs that never
    /// co-occur score −1; a pair present in every document scores 1.
    pub fn npmi_pair(&self, a: usize, b: usize) -> f64 {
        let n = self.num_docs as f64;
        let co = self.co_freq(a, b);
        if co == 0 || n == 0.0 {
            return -1.0;
        }
        let pij = co as f64 / n;
        if co == self.num_docs {
            return 1.0;
        }
        let pi = self.doc_freq(a) as f64 / n;
        let pj = self.doc_freq(b) as f64 / n;
        let v = libm::log(pij / (pi * pj)) / -libm::log(pij);
        v.clamp(-1.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NpmiScores {
    pub per_topic: Vec<f64>,
    pub mean: f64,
}

/// Mean pairwise NPMI over each topic's top `top_n` words.
pub fn npmi(topics: &TopicSet, index: &DocIndex, top_n: usize) -> Result<NpmiScores> {
    if top_n < 2 {
        return Err(Error::contract("NPMI needs at least two words per topic"));
    }
    let mut per_topic = Vec::with_capacity(topics.len());
    for (t, words) in topics.iter().enumerate() {
        if words.len() < top_n {
            return Err(Error::contract(format!("topic {t} has {} words, need {top_n}", words.len())));
        }
        let mut s = 0.0;
        let mut pairs = 0usize;
        for i in 0..top_n {
            for j in i + 1..top_n {
                s += index.npmi_pair(words[i].0, words[j].0);
                pairs += 1;
            }
        }
        per_topic.push(s / pairs as f64);
    }
    let mean = if per_topic.is_empty() { 0.0 } else { per_topic.iter().sum::<f64>() / per_topic.len() as f64 };
    Ok(NpmiScores { per_topic, mean })
}

/// Fraction of unique words among all topics' top `top_n` words.
pub fn topic_diversity(topics: &TopicSet, top_n: usize) -> Result<f64> {
    if topics.is_empty() || top_n == 0 {
        return Err(Error::contract("topic diversity needs topics and top_n >= 1"));
    }
    let mut unique = BTreeSet::new();
    for (t, words) in topics.iter().enumerate() {
        if words.len() < top_n {
            return Err(Error::contract(format!("topic {t} has {} words, need {top_n}", words.len())));
        }
        unique.extend(words[..top_n].iter().map(|&(w, _)| w));
    }
    Ok(unique.len() as f64 / (top_n * topics.len()) as f64)
}

/// Indices of the ⌈T/2⌉ highest-scoring topics (ties by lower index), in
/// ascending index order.
pub fn select_top_half(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(scores.len().div_ceil(2));
    idx.sort_unstable();
    idx
}
