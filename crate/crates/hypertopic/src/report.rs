//! Output files. Every file starts with a reproducibility header: the crate
//! version, the run seed and a digest of the training configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use hypertopic_core::corpus::Vocabulary;
use hypertopic_core::eval::{CoordRow, MetricReport, TopicSet};
use hypertopic_core::trainer::{StepRecord, TrainConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::io::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config_digest: String,
}

impl Header {
    pub fn new(config: &TrainConfig) -> Self {
        Header {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            config_digest: config_digest(config),
        }
    }

    /// The header as a `#` comment line for tab-separated files.
    pub fn comment(&self) -> String {
        format!("# {} {} seed={} config_digest={}\n", self.tool, self.version, self.seed, self.config_digest)
    }
}

/// SHA-256 of the configuration's JSON encoding, hex encoded.
pub fn config_digest(config: &TrainConfig) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct WithHeader<'a, T> {
    header: &'a Header,
    #[serde(flatten)]
    body: &'a T,
}

pub fn to_json_with_header<T: Serialize>(header: &Header, body: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&WithHeader { header, body })? + "\n")
}

pub fn write_report(path: &Path, header: &Header, report: &MetricReport) -> Result<()> {
    write_atomic(path, to_json_with_header(header, report)?.as_bytes())
}

/// `layer  topic  rank  word  weight` rows, one per top word.
pub fn topics_tsv(header: &Header, vocab: &Vocabulary, layers: &[TopicSet]) -> String {
    let mut out = header.comment();
    out.push_str("layer\ttopic\trank\tword\tweight\n");
    for (l, set) in layers.iter().enumerate() {
        for (t, words) in set.iter().enumerate() {
            for (r, &(w, weight)) in words.iter().enumerate() {
                out.push_str(&format!("{}\t{t}\t{}\t{}\t{weight}\n", l + 1, r + 1, vocab.token(w)));
            }
        }
    }
    out
}

/// `name  layer  x1..xn  norm` rows.
pub fn coords_tsv(header: &Header, rows: &[CoordRow], name: impl Fn(&CoordRow) -> String) -> String {
    let mut out = header.comment();
    let dim = rows.first().map_or(0, |r| r.coords.len());
    out.push_str("name\tlayer");
    for i in 0..dim {
        out.push_str(&format!("\tx{}", i + 1));
    }
    out.push_str("\tnorm\n");
    for r in rows {
        out.push_str(&format!("{}\t{}", name(r), r.layer));
        for c in &r.coords {
            out.push_str(&format!("\t{c}"));
        }
        out.push_str(&format!("\t{}\n", r.norm));
    }
    out
}

#[derive(Serialize)]
struct LogLine {
    step: u64,
    neg_elbo: f64,
    contrastive: f64,
    total: f64,
    wallclock_ms: u64,
}

/// Line-delimited JSON training log; the first line carries the header.
pub struct TrainingLog {
    out: BufWriter<File>,
    start: Instant,
}

impl TrainingLog {
    /// Creates a new log, or appends to an existing one when resuming.
    pub fn open(path: &Path, header: &Header, append: bool) -> Result<Self> {
        let exists = path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let mut out = BufWriter::new(file);
        if !(append && exists) {
            serde_json::to_writer(&mut out, &serde_json::json!({ "header": header }))?;
            out.write_all(b"\n")?;
        }
        Ok(TrainingLog { out, start: Instant::now() })
    }

    pub fn record(&mut self, r: &StepRecord) -> Result<()> {
        let line = LogLine {
            step: r.step,
            neg_elbo: r.neg_elbo,
            contrastive: r.contrastive,
            total: r.total,
            wallclock_ms: self.start.elapsed().as_millis() as u64,
        };
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}
