//! Sparse bag-of-words corpora, their text formats, and seeded mini-batches.
//!
//! Documents file: one document per line, `<label>\t<idx>:<count> ...`,
//! with label `-1` when absent. Vocabulary file: one token per line. Split
//! file: `train` or `test` per line, aligned with the documents.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::SparseRows;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::validation(format!("vocabulary entry {i} is empty")));
            }
            if let Some(prev) = index.insert(t.clone(), i) {
                return Err(Error::validation(format!("token `{t}` appears at {prev} and {i}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// One token per line; a trailing newline is optional.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut index = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let tok = line.trim_end_matches('\r');
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::parse(i + 1, format!("invalid token `{tok}`")));
            }
            if let Some(prev) = index.insert(tok.to_string(), i) {
                return Err(Error::parse(i + 1, format!("token `{tok}` already on line {}", prev + 1)));
            }
            tokens.push(tok.to_string());
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

/// A document as sorted `(term, count)` pairs.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BowDocument {
    terms: Vec<(usize, u32)>,
    label: Option<usize>,
}

impl BowDocument {
    pub fn new(terms: Vec<(usize, u32)>, label: Option<usize>) -> Result<Self> {
        for w in terms.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::validation(format!(
                    "term indices must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(i, _)) = terms.iter().find(|t| t.1 == 0) {
            return Err(Error::validation(format!("term {i} has count 0")));
        }
        Ok(BowDocument { terms, label })
    }

    /// Builds a document from unordered counts, merging repeated indices.
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, u32)>, label: Option<usize>) -> Self {
        let mut map = BTreeMap::new();
        for (i, c) in counts {
            if c > 0 {
                *map.entry(i).or_insert(0u32) += c;
            }
        }
        BowDocument { terms: map.into_iter().collect(), label }
    }

    pub fn terms(&self) -> &[(usize, u32)] {
        &self.terms
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn total(&self) -> u64 {
        self.terms.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split `{other}`"))),
        }
    }
}

/// Parses a documents file.
pub fn parse_documents(text: &str) -> Result<Vec<BowDocument>> {
    let mut docs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        let (label_part, rest) = match line.split_once('\t') {
            Some((l, r)) => (l, r),
            None => (line, ""),
        };
        let label_part = label_part.trim();
        let label = match label_part.parse::<i64>() {
            Ok(-1) => None,
            Ok(l) if l >= 0 => Some(l as usize),
            _ => return Err(Error::parse(line_no, format!("bad label `{label_part}`"))),
        };
        let mut terms = Vec::new();
        for tok in rest.split_ascii_whitespace() {
            let (idx, cnt) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(line_no, format!("expected `idx:count`, got `{tok}`")))?;
            let idx: usize = idx.parse().map_err(|_| Error::parse(line_no, format!("bad index in `{tok}`")))?;
            let cnt: u32 = cnt.parse().map_err(|_| Error::parse(line_no, format!("bad count in `{tok}`")))?;
            terms.push((idx, cnt));
        }
        let doc = BowDocument::new(terms, label).map_err(|e| match e {
            Error::Validation(m) => Error::parse(line_no, m),
            other => other,
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn format_documents(docs: &[BowDocument]) -> String {
    let mut s = String::new();
    for d in docs {
        match d.label {
            Some(l) => write!(s, "{l}\t").unwrap(),
            None => s.push_str("-1\t"),
        }
        for (k, &(i, c)) in d.terms.iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            write!(s, "{i}:{c}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn parse_splits(text: &str) -> Result<Vec<Split>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| l.trim().parse().map_err(|_| Error::parse(i + 1, format!("expected train or test, got `{}`", l.trim()))))
        .collect()
}

pub fn format_splits(splits: &[Split]) -> String {
    let mut s = String::new();
    for sp in splits {
        writeln!(s, "{sp}").unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct BowCorpus {
    vocab: Vocabulary,
    docs: Vec<BowDocument>,
    splits: Vec<Split>,
    label_names: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusStats {
    pub documents: usize,
    pub train_documents: usize,
    pub test_documents: usize,
    pub vocab_size: usize,
    pub total_words: u64,
    pub labels: usize,
    pub labeled_documents: usize,
    pub empty_documents: usize,
}

impl BowCorpus {
    /// Checks that term indices fit the vocabulary, labels fit the label
    /// names (when given) and that at least one document is for training.
    /// Without a split every document is a training document.
    pub fn new(
        vocab: Vocabulary,
        docs: Vec<BowDocument>,
        splits: Option<Vec<Split>>,
        label_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let splits = splits.unwrap_or_else(|| alloc::vec![Split::Train; docs.len()]);
        if splits.len() != docs.len() {
            return Err(Error::validation(format!(
                "{} split entries for {} documents",
                splits.len(),
                docs.len()
            )));
        }
        for (i, d) in docs.iter().enumerate() {
            if let Some(&(t, _)) = d.terms.last() {
                if t >= vocab.len() {
                    return Err(Error::validation(format!(
                        "document {} uses term {t} but the vocabulary has {} entries",
                        i + 1,
                        vocab.len()
                    )));
                }
            }
            if let (Some(l), Some(names)) = (d.label, &label_names) {
                if l >= names.len() {
                    return Err(Error::validation(format!(
                        "document {} has label {l} but only {} label names exist",
                        i + 1,
                        names.len()
                    )));
                }
            }
        }
        if !splits.contains(&Split::Train) {
            return Err(Error::validation("corpus has no training documents"));
        }
        Ok(BowCorpus { vocab, docs, splits, label_names })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn docs(&self) -> &[BowDocument] {
        &self.docs
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.docs.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices(Split::Test)
    }

    /// Number of label classes: the label names when given, otherwise one
    /// more than the largest label.
    pub fn num_labels(&self) -> usize {
        match &self.label_names {
            Some(n) => n.len(),
            None => self.docs.iter().filter_map(|d| d.label).max().map_or(0, |m| m + 1),
        }
    }

    /// Labels of the given documents; errors when any is missing.
    pub fn labels(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| {
                self.docs[i]
                    .label
                    .ok_or_else(|| Error::MissingLabels(format!("document {} has no label", i + 1)))
            })
            .collect()
    }

    /// Raw counts of the given documents as a sparse batch.
    pub fn batch(&self, indices: &[usize]) -> SparseRows {
        let mut m = SparseRows::new(self.vocab.len());
        for &i in indices {
            m.push_row(self.docs[i].terms.iter().map(|&(t, c)| (t, c as f64)));
        }
        m
    }

    pub fn stats(&self) -> CorpusStats {
        let train = self.splits.iter().filter(|&&s| s == Split::Train).count();
        CorpusStats {
            documents: self.docs.len(),
            train_documents: train,
            test_documents: self.docs.len() - train,
            vocab_size: self.vocab.len(),
            total_words: self.docs.iter().map(BowDocument::total).sum(),
            labels: self.num_labels(),
            labeled_documents: self.docs.iter().filter(|d| d.label.is_some()).count(),
            empty_documents: self.docs.iter().filter(|d| d.is_empty()).count(),
        }
    }

    /// Document indices of one training epoch, split into batches. The order
    /// is a permutation of the training documents drawn from
    /// `(seed, epoch)`; the final batch may be short.
    pub fn epoch_batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let train = self.train_indices();
        let mut r = rng::stream(seed, rng::PURPOSE_EPOCH, epoch);
        let order = rng::permutation(train.len(), &mut r);
        Ok(order.chunks(batch_size).map(|c| c.iter().map(|&p| train[p]).collect()).collect())
    }

    /// Keeps the documents at `indices` (in that order).
    pub fn subset(&self, indices: &[usize]) -> Result<BowCorpus> {
        BowCorpus::new(
            self.vocab.clone(),
            indices.iter().map(|&i| self.docs[i].clone()).collect(),
            Some(indices.iter().map(|&i| self.splits[i]).collect()),
            self.label_names.clone(),
        )
    }

    /// Restricts the vocabulary to `keep` (old indices, in the new order),
    /// dropping all other terms from every document.
    pub fn restrict_vocab(&self, keep: &[usize]) -> Result<BowCorpus> {
        let mut remap = alloc::vec![usize::MAX; self.vocab.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let vocab = Vocabulary::new(keep.iter().map(|&i| self.vocab.token(i).to_string()).collect())?;
        let docs = self
            .docs
            .iter()
            .map(|d| {
                BowDocument::from_counts(
                    d.terms.iter().filter(|(t, _)| remap[*t] != usize::MAX).map(|&(t, c)| (remap[t], c)),
                    d.label,
                )
            })
            .collect();
        BowCorpus::new(vocab, docs, Some(self.splits.clone()), self.label_names.clone())
    }

    /// Term indices ordered by total count, most frequent first (ties by
    /// index).
    pub fn terms_by_frequency(&self) -> Vec<usize> {
        let mut totals = alloc::vec![0u64; self.vocab.len()];
        for d in &self.docs {
            for &(t, c) in &d.terms {
                totals[t] += c as u64;
            }
        }
        let mut idx: Vec<usize> = (0..totals.len()).collect();
        idx.sort_by(|&a, &b| totals[b].cmp(&totals[a]).then(a.cmp(&b)));
        idx
    }
}
