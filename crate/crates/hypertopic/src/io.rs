//! Corpus directories, taxonomy JSON and hypernym-path files.
//!
//! A corpus directory holds `vocab.txt` and `docs.txt`, plus optional
//! `splits.txt` (`train`/`test` per document) and `labels.txt` (one label
//! name per line).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hypertopic_core::corpus::{
    format_documents, format_splits, parse_documents, parse_splits, BowCorpus, Vocabulary,
};
use hypertopic_core::taxonomy::{parse_hypernym_paths, ConceptNode, ConceptTaxonomy, HypernymPath, Leaf};
use serde::{Deserialize, Serialize};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const DOCS_FILE: &str = "docs.txt";
pub const SPLITS_FILE: &str = "splits.txt";
pub const LABELS_FILE: &str = "labels.txt";

/// Environment variable naming the default data directory.
pub const DATA_ENV: &str = "HYPERTOPIC_DATA";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

/// `name` as given when it exists, otherwise looked up under the data
/// directory.
pub fn resolve_data_path(name: &Path, data_dir: Option<&Path>) -> PathBuf {
    if name.exists() || name.is_absolute() {
        return name.to_path_buf();
    }
    match data_dir {
        Some(d) => d.join(name),
        None => name.to_path_buf(),
    }
}

pub fn load_corpus(dir: &Path) -> Result<BowCorpus> {
    if !dir.is_dir() {
        bail!("corpus directory {} does not exist", dir.display());
    }
    let with_file = |f: &str, e: hypertopic_core::Error| anyhow::Error::new(e).context(format!("in {}", dir.join(f).display()));
    let vocab = Vocabulary::parse(&read(&dir.join(VOCAB_FILE))?).map_err(|e| with_file(VOCAB_FILE, e))?;
    let docs = parse_documents(&read(&dir.join(DOCS_FILE))?).map_err(|e| with_file(DOCS_FILE, e))?;
    let splits_path = dir.join(SPLITS_FILE);
    let splits = if splits_path.exists() {
        Some(parse_splits(&read(&splits_path)?).map_err(|e| with_file(SPLITS_FILE, e))?)
    } else {
        None
    };
    let labels_path = dir.join(LABELS_FILE);
    let label_names = if labels_path.exists() {
        Some(read(&labels_path)?.lines().map(str::to_owned).filter(|l| !l.is_empty()).collect())
    } else {
        None
    };
    Ok(BowCorpus::new(vocab, docs, splits, label_names).with_context(|| format!("corpus {}", dir.display()))?)
}

pub fn save_corpus(dir: &Path, corpus: &BowCorpus) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join(VOCAB_FILE), corpus.vocab().to_text().as_bytes())?;
    write_atomic(&dir.join(DOCS_FILE), format_documents(corpus.docs()).as_bytes())?;
    write_atomic(&dir.join(SPLITS_FILE), format_splits(corpus.splits()).as_bytes())?;
    if let Some(names) = corpus.label_names() {
        let mut text = names.join("\n");
        text.push('\n');
        write_atomic(&dir.join(LABELS_FILE), text.as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyFile {
    depth: usize,
    nodes: Vec<ConceptNode>,
    leaves: Vec<Leaf>,
}

pub fn taxonomy_to_json(t: &ConceptTaxonomy) -> Result<String> {
    let file = TaxonomyFile { depth: t.depth(), nodes: t.nodes().to_vec(), leaves: t.leaves().to_vec() };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn taxonomy_from_json(text: &str) -> Result<ConceptTaxonomy> {
    let f: TaxonomyFile = serde_json::from_str(text)?;
    Ok(ConceptTaxonomy::new(f.depth, f.nodes, f.leaves)?)
}

pub fn save_taxonomy(path: &Path, t: &ConceptTaxonomy) -> Result<()> {
    write_atomic(path, taxonomy_to_json(t)?.as_bytes())
}

pub fn load_taxonomy(path: &Path) -> Result<ConceptTaxonomy> {
    taxonomy_from_json(&read(path)?).with_context(|| format!("taxonomy {}", path.display()))
}

pub fn load_hypernym_paths(path: &Path) -> Result<Vec<HypernymPath>> {
    parse_hypernym_paths(&read(path)?).with_context(|| format!("hypernym paths {}", path.display()))
}

/// Reads a little-endian `f32` array of exactly `len` values.
pub fn read_f32_array(path: &Path, len: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() != len * 4 {
        bail!("{}: expected {} bytes ({len} values), found {}", path.display(), len * 4, bytes.len());
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}
