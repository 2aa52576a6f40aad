use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hypertopic_core::corpus::BowCorpus;
use hypertopic_core::eval::{embedding_coords, evaluate, layer_topics, CoordRow, EvalOptions, MetricReport};
use hypertopic_core::taxonomy::{BuildWarning, ConceptTaxonomy};
use hypertopic_core::trainer::{TrainConfig, TrainRun};
use log::{info, warn};

use super::*;
use crate::checkpoint::{Checkpoint, META_FILE};
use crate::io::{load_corpus, load_hypernym_paths, load_taxonomy, resolve_data_path, save_corpus, save_taxonomy, write_atomic};
use crate::report::{coords_tsv, to_json_with_header, topics_tsv, write_report, Header, TrainingLog};
use crate::synthetic::{generate, PlantedConfig};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOG_FILE: &str = "train.jsonl";

struct Ctx<'a> {
    data_dir: Option<&'a Path>,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        resolve_data_path(p, self.data_dir)
    }

    fn corpus(&self, p: &Path) -> Result<BowCorpus> {
        load_corpus(&self.path(p))
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = Ctx { data_dir: cli.data_dir.as_deref() };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::BuildTaxonomy(a) => build_taxonomy(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Topics(a) => topics(&ctx, a),
        Command::ExportEmbeddings(a) => export(&ctx, a),
        Command::SweepLambda(a) => sweep(&ctx, a),
        Command::Synthesize(a) => synthesize(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => stdout(text),
    }
}

/// Writes to stdout; a closed pipe downstream is not an error.
fn stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let corpus = ctx.corpus(&a.corpus)?;
    let mut out = serde_json::json!({ "corpus": corpus.stats() });
    if let Some(t) = &a.taxonomy {
        let tax = load_taxonomy(&ctx.path(t))?;
        out["taxonomy"] = serde_json::to_value(tax.validate(corpus.vocab().len())?)?;
    }
    stdout(&format!("{}\n", serde_json::to_string_pretty(&out)?))?;
    Ok(())
}

fn build_taxonomy(ctx: &Ctx, a: &BuildTaxonomyArgs) -> Result<()> {
    let corpus = ctx.corpus(&a.corpus)?;
    let paths = load_hypernym_paths(&ctx.path(&a.paths))?;
    let (tax, warnings) = ConceptTaxonomy::build_from_hypernym_paths(&paths, corpus.vocab(), a.depth)?;
    for w in &warnings {
        match w {
            BuildWarning::UnknownWord(word) => warn!("`{word}` is not in the vocabulary; skipped"),
            BuildWarning::DuplicateWord(word) => warn!("`{word}` listed again; later path ignored"),
            BuildWarning::ShallowPath { word, length } => {
                warn!("`{word}` has {length} concepts, fewer than depth {}; skipped", a.depth)
            }
        }
    }
    save_taxonomy(&a.out, &tax)?;
    let report = tax.validate(corpus.vocab().len())?;
    stdout(&format!("{}\n", serde_json::to_string_pretty(&serde_json::json!({ "taxonomy": report, "warnings": warnings.len() }))?))?;
    Ok(())
}

/// Accepts either a checkpoint directory or a run directory containing one.
fn checkpoint_path(p: &Path) -> PathBuf {
    if !p.join(META_FILE).exists() && p.join(CHECKPOINT_DIR).join(META_FILE).exists() {
        p.join(CHECKPOINT_DIR)
    } else {
        p.to_path_buf()
    }
}

fn load_checkpoint(ctx: &Ctx, p: &Path) -> Result<Checkpoint> {
    let dir = checkpoint_path(&ctx.path(p));
    Checkpoint::load(&dir).with_context(|| format!("checkpoint {}", dir.display()))
}

fn check_vocab(ck: &Checkpoint, corpus: &BowCorpus) -> Result<()> {
    if ck.meta.vocab_size != corpus.vocab().len() {
        return Err(UsageError(format!(
            "checkpoint was trained on {} words but the corpus vocabulary has {}",
            ck.meta.vocab_size,
            corpus.vocab().len()
        ))
        .into());
    }
    Ok(())
}

fn merged_params(flags: &HyperParams, config: Option<&Path>) -> Result<HyperParams> {
    match config {
        Some(p) => Ok(flags.over(&HyperParams::from_toml_file(p)?)),
        None => Ok(flags.clone()),
    }
}

/// Trains to completion, logging every step and checkpointing every
/// `every` epochs and at the end. On failure the last saved checkpoint is
/// left untouched.
fn train_loop(
    run: &mut TrainRun,
    corpus: &BowCorpus,
    taxonomy: Option<&ConceptTaxonomy>,
    out: &Path,
    every: usize,
    append_log: bool,
) -> Result<()> {
    let header = Header::new(run.config());
    let mut log = TrainingLog::open(&out.join(LOG_FILE), &header, append_log)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let v = corpus.vocab().len();
    while !run.is_finished() {
        let mut records = Vec::new();
        let result = run.run_epoch(corpus, |r| records.push(*r));
        for r in &records {
            log.record(r)?;
        }
        log.flush()?;
        let summary = result.context("training aborted; the last saved checkpoint was kept")?;
        if let Some(e) = summary {
            info!("epoch {} -elbo {:.4} contrastive {:.4} total {:.4}", e.epoch, e.neg_elbo, e.contrastive, e.total);
            if run.is_finished() || (e.epoch as usize + 1) % every.max(1) == 0 {
                Checkpoint::from_run(run, v, taxonomy).save(&ckpt)?;
            }
        }
    }
    if !ckpt.join(META_FILE).exists() || Checkpoint::load(&ckpt)?.meta.step != run.state().step {
        Checkpoint::from_run(run, v, taxonomy).save(&ckpt)?;
    }
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let corpus = ctx.corpus(&a.corpus)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if a.resume {
        let mut ck = load_checkpoint(ctx, &a.out)?;
        check_vocab(&ck, &corpus)?;
        let mut changed = a.params.clone();
        changed.epochs = None;
        if !changed.is_empty() || a.config.is_some() || a.taxonomy.is_some() || a.layers_from_taxonomy.is_some() {
            return Err(UsageError("--resume only accepts --epochs; the rest comes from the checkpoint".into()).into());
        }
        if let Some(e) = a.params.epochs {
            ck.meta.config.epochs = e;
        }
        let tax = ck.taxonomy.clone();
        let mut run = ck.into_run()?;
        return train_loop(&mut run, &corpus, tax.as_ref(), &a.out, a.checkpoint_every, true);
    }
    let params = merged_params(&a.params, a.config.as_deref())?;
    let tax_path = a.layers_from_taxonomy.as_ref().or(a.taxonomy.as_ref());
    let tax = tax_path.map(|p| load_taxonomy(&ctx.path(p))).transpose()?;
    let sizes = a.layers_from_taxonomy.as_ref().and(tax.as_ref()).map(ConceptTaxonomy::layer_sizes);
    let config = params.resolve(sizes.as_deref())?;
    if let Some(t) = &tax {
        t.validate(corpus.vocab().len())?;
    }
    let mut run = TrainRun::new(config, corpus.vocab().len(), tax.as_ref())?;
    train_loop(&mut run, &corpus, tax.as_ref(), &a.out, a.checkpoint_every, false)
}

fn report_for(ck: &Checkpoint, corpus: &BowCorpus, options: EvalOptions) -> Result<MetricReport> {
    let model = ck.model()?;
    let header = Header::new(&ck.meta.config);
    Ok(evaluate(&model, &ck.store, corpus, options, header.config_digest)?)
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(ctx, &a.checkpoint)?;
    let corpus = ctx.corpus(&a.corpus)?;
    check_vocab(&ck, &corpus)?;
    let options = EvalOptions {
        clustering: !a.no_clustering,
        classification: !a.no_classification,
        seed: a.seed.unwrap_or(ck.meta.config.seed),
        ..EvalOptions::default()
    };
    let report = report_for(&ck, &corpus, options)?;
    let header = Header::new(&ck.meta.config);
    match &a.out {
        Some(p) => write_report(p, &header, &report),
        None => emit(None, &to_json_with_header(&header, &report)?),
    }
}

fn topics(ctx: &Ctx, a: &TopicsArgs) -> Result<()> {
    let ck = load_checkpoint(ctx, &a.checkpoint)?;
    let corpus = ctx.corpus(&a.corpus)?;
    check_vocab(&ck, &corpus)?;
    let phis = ck.model()?.phis(&ck.store);
    let n = a.top.min(corpus.vocab().len());
    let layers = (1..=phis.len()).map(|l| layer_topics(&phis, l, n)).collect::<hypertopic_core::Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &topics_tsv(&Header::new(&ck.meta.config), corpus.vocab(), &layers))
}

fn export(ctx: &Ctx, a: &ExportArgs) -> Result<()> {
    let ck = load_checkpoint(ctx, &a.checkpoint)?;
    let corpus = ctx.corpus(&a.corpus)?;
    check_vocab(&ck, &corpus)?;
    let emb = ck.model()?.embedding_set(&ck.store);
    let rows = embedding_coords(&emb, ck.meta.config.model.space);
    let layers = ck.meta.config.model.topics.len();
    let tax = ck.taxonomy.as_ref();
    let name = |r: &CoordRow| -> String {
        if r.layer == 0 {
            return corpus.vocab().token(r.index).to_owned();
        }
        match tax {
            Some(t) if t.depth() == layers => t.node(t.layer(layers - r.layer + 1)[r.index]).name.clone(),
            _ => format!("topic{}.{}", r.layer, r.index),
        }
    };
    emit(a.out.as_deref(), &coords_tsv(&Header::new(&ck.meta.config), &rows, name))
}

fn sweep(ctx: &Ctx, a: &SweepArgs) -> Result<()> {
    let corpus = ctx.corpus(&a.corpus)?;
    let tax = load_taxonomy(&ctx.path(&a.layers_from_taxonomy))?;
    let base = merged_params(&a.params, a.config.as_deref())?;
    fs::create_dir_all(&a.out)?;
    let mut rows: Vec<(f64, TrainConfig, MetricReport)> = Vec::new();
    for &lambda in &a.lambdas {
        let params = HyperParams { lambda: Some(lambda), ..base.clone() };
        let config = params.resolve(Some(&tax.layer_sizes()))?;
        let dir = a.out.join(format!("lambda-{lambda}"));
        fs::create_dir_all(&dir)?;
        info!("training with lambda = {lambda}");
        let mut run = TrainRun::new(config.clone(), corpus.vocab().len(), Some(&tax))?;
        train_loop(&mut run, &corpus, Some(&tax), &dir, usize::MAX, false)?;
        let ck = Checkpoint::load(&dir.join(CHECKPOINT_DIR))?;
        let has_labels = corpus.docs().iter().all(|d| d.label().is_some());
        let options = EvalOptions {
            clustering: has_labels,
            classification: has_labels && !corpus.test_indices().is_empty(),
            seed: config.seed,
            ..EvalOptions::default()
        };
        let report = report_for(&ck, &corpus, options)?;
        write_report(&dir.join("report.json"), &Header::new(&config), &report)?;
        rows.push((lambda, config, report));
    }
    let mut text = rows.first().map(|r| Header::new(&r.1).comment()).unwrap_or_default();
    let layers = rows.first().map_or(0, |r| r.2.layers.len());
    text.push_str("lambda");
    for l in 1..=layers {
        text.push_str(&format!("\tnpmi_l{l}\tnpmi_top_half_l{l}\ttd_l{l}"));
    }
    text.push_str("\tkm_purity\tkm_nmi\taccuracy\n");
    let opt = |v: Option<f64>| v.map_or("NA".to_owned(), |x| format!("{x:.4}"));
    for (lambda, _, r) in &rows {
        text.push_str(&lambda.to_string());
        for m in &r.layers {
            text.push_str(&format!("\t{:.4}\t{:.4}\t{}", m.npmi, m.npmi_top_half, opt(m.diversity)));
        }
        text.push_str(&format!("\t{}\t{}\t{}\n", opt(r.km_purity), opt(r.km_nmi), opt(r.accuracy)));
    }
    write_atomic(&a.out.join("sweep.tsv"), text.as_bytes())?;
    stdout(&text)?;
    Ok(())
}

fn synthesize(a: &SynthesizeArgs) -> Result<()> {
    let cfg = PlantedConfig { vocab_size: a.vocab, docs: a.docs, seed: a.seed, ..PlantedConfig::default() };
    let planted = generate(&cfg).map_err(|e| UsageError(format!("{e:#}")))?;
    save_corpus(&a.out, &planted.corpus)?;
    write_atomic(&a.out.join("hypernyms.txt"), planted.hypernym_paths.as_bytes())?;
    stdout(&format!("{}\n", serde_json::to_string_pretty(&planted.corpus.stats())?))?;
    Ok(())
}
