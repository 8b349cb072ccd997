use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use retrosum::attention::{bench_attention, AttentionKind, BenchRow};
use retrosum::corpus::{compute_stats, load_split, sample_subset, split_path, Document, LoadOptions, Split};
use retrosum::eval::{evaluate_corpus, read_predictions};
use retrosum::index::{load_index, save_index, DocIndex};
use retrosum::model::{
    build_model, generate, index_document, load_model, retrofit, save_model, train, LossRecord, Model, ModelKind,
    TraceEntry, TrainData, TrainMode, Trainer,
};
use retrosum::text::{train_tokenizer, Tokenizer};

use crate::run::Run;

fn load_docs(run: &mut Run, split: Split) -> Result<Vec<Document>> {
    let dir = run.config.corpus_dir()?.to_path_buf();
    let path = split_path(&dir, split).with_context(|| format!("no {split} split in {}", dir.display()))?;
    run.input(&format!("corpus.{split}"), &path)?;
    let opts = LoadOptions { lenient: run.config.lenient };
    let loaded = load_split(&path, split, opts)?;
    let sub = &run.config.subset;
    if sub.fraction < 1.0 {
        Ok(sample_subset(&loaded.documents, sub.fraction, sub.seed)?)
    } else {
        Ok(loaded.documents)
    }
}

fn load_tokenizer(run: &mut Run) -> Result<Tokenizer> {
    let path = run.config.tokenizer_path()?.to_path_buf();
    run.input("tokenizer", &path)?;
    Tokenizer::load(&path).with_context(|| format!("loading tokenizer {}", path.display()))
}

fn load_checkpoint(run: &mut Run) -> Result<(Model, Option<Trainer>)> {
    let path = run.config.checkpoint_path()?.to_path_buf();
    run.input("checkpoint", &path)?;
    load_model(&path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Fails fast on missing inputs before any long-running work.
fn require(paths: &[(&str, Option<&Path>)]) -> Result<()> {
    for (what, p) in paths {
        match p {
            Some(p) if p.exists() => {}
            Some(p) => bail!("{what} {} does not exist", p.display()),
            None => bail!("no {what} configured"),
        }
    }
    Ok(())
}

fn index_file_name(doc_id: &str) -> String {
    let safe: String = doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.idx")
}

/// A retro model whose neighbor encoder embeds chunks; base checkpoints are
/// retro-fitted on the fly (their neighbor encoder is freshly initialized).
fn retro_model(model: Model) -> Result<Model> {
    match model.kind {
        ModelKind::Retro => Ok(model),
        ModelKind::Decoder => {
            log::warn!("checkpoint is a base decoder; indexing with a freshly retro-fitted neighbor encoder");
            Ok(retrofit(model)?)
        }
        ModelKind::EncDec => bail!("encoder-decoder checkpoints have no neighbor encoder"),
    }
}

pub fn ingest(run: &mut Run, splits: &[Split]) -> Result<()> {
    let dir = run.config.corpus_dir()?.to_path_buf();
    require(&[("corpus directory", Some(&dir))])?;
    let tokenizer = match run.config.paths.tokenizer.clone() {
        Some(_) => Some(load_tokenizer(run)?),
        None => None,
    };
    let mut loaded = Vec::new();
    let mut skipped = 0;
    for &split in splits {
        let Some(path) = split_path(&dir, split) else {
            log::warn!("no {split} split in {}", dir.display());
            continue;
        };
        run.input(&format!("corpus.{split}"), &path)?;
        let l = load_split(&path, split, LoadOptions { lenient: run.config.lenient })?;
        skipped += l.skipped;
        loaded.push(l);
    }
    ensure!(!loaded.is_empty(), "no split files found in {}", dir.display());
    let views: Vec<(Split, &[Document])> = loaded.iter().map(|l| (l.split, &l.documents[..])).collect();
    let stats = compute_stats(&views, tokenizer.as_ref())?;
    if skipped > 0 {
        log::warn!("skipped {skipped} malformed records");
    }
    let csv = format!("{}\n{}\n", retrosum::corpus::CorpusStats::CSV_HEADER, stats.to_csv_row());
    run.write(Path::new("stats.csv"), csv.as_bytes())?;
    run.write(Path::new("stats.json"), &serde_json::to_vec_pretty(&stats)?)?;
    run.counters.insert("skipped_records".into(), skipped as u64);
    print!("{}", stats.to_table());
    Ok(())
}

pub fn train_tok(run: &mut Run, out: &Path) -> Result<()> {
    require(&[("corpus directory", run.config.paths.corpus.as_deref())])?;
    let docs = load_docs(run, Split::Train)?;
    ensure!(!docs.is_empty(), "the train split is empty");
    let texts = docs.iter().flat_map(|d| [d.title.clone(), d.abstract_text(), d.body_text()]);
    let tok = train_tokenizer(texts, run.config.vocab_size)?;
    let path = run.path(out);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    tok.save(&path)?;
    run.track(&path);
    println!("tokenizer with {} entries -> {}", tok.vocab_size(), path.display());
    Ok(())
}

fn build_indexes(model: &Model, docs: &[Document], tok: &Tokenizer) -> Result<BTreeMap<String, DocIndex>> {
    docs.par_iter()
        .map(|d| Ok((d.article_id.clone(), index_document(model, d, tok)?)))
        .collect()
}

pub fn build_index(run: &mut Run, split: Split, out: &Path) -> Result<()> {
    let cfg = &run.config;
    require(&[
        ("corpus directory", cfg.paths.corpus.as_deref()),
        ("tokenizer", cfg.paths.tokenizer.as_deref()),
        ("checkpoint", cfg.paths.checkpoint.as_deref()),
    ])?;
    let tok = load_tokenizer(run)?;
    let (model, _) = load_checkpoint(run)?;
    let model = retro_model(model)?;
    let docs = load_docs(run, split)?;
    let dir = run.path(out);
    std::fs::create_dir_all(&dir)?;
    let written: Vec<PathBuf> = docs
        .par_iter()
        .map(|d| {
            let index = index_document(&model, d, &tok)?;
            let path = dir.join(index_file_name(&d.article_id));
            save_index(&path, &index)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    for p in &written {
        run.track(p);
    }
    println!("{} indexes -> {}", written.len(), dir.display());
    Ok(())
}

pub fn train_cmd(run: &mut Run, mode: TrainMode) -> Result<()> {
    let cfg = run.config.clone();
    require(&[
        ("corpus directory", cfg.paths.corpus.as_deref()),
        ("tokenizer", cfg.paths.tokenizer.as_deref()),
    ])?;
    if mode == TrainMode::Retrofit && cfg.paths.resume.is_none() {
        require(&[("base checkpoint", cfg.paths.checkpoint.as_deref())])?;
    }
    if let Some(p) = &cfg.paths.resume {
        require(&[("resume checkpoint", Some(p))])?;
    }
    let tok = load_tokenizer(run)?;
    ensure!(
        tok.vocab_size() <= cfg.model.vocab_size,
        "tokenizer has {} entries but model.vocab_size is {}",
        tok.vocab_size(),
        cfg.model.vocab_size
    );
    let train_docs = load_docs(run, Split::Train)?;
    let val_docs = load_docs(run, Split::Val).unwrap_or_else(|e| {
        log::warn!("no validation split: {e:#}");
        Vec::new()
    });

    let (mut model, mut trainer) = if let Some(p) = &cfg.paths.resume {
        run.input("resume", p)?;
        let (model, trainer) = load_model(p)?;
        let mut trainer = trainer.context("resume checkpoint has no optimizer state")?;
        trainer.config.epochs = cfg.train.epochs;
        trainer.config.max_steps = cfg.train.max_steps;
        (model, trainer)
    } else {
        let model = match mode {
            TrainMode::Retrofit => retrofit(load_checkpoint(run)?.0)?,
            _ => build_model(&cfg.model, mode.model_kind())?,
        };
        (model, Trainer::new(cfg.train.clone())?)
    };
    log::info!(
        "{} model: {} parameters, {} trainable",
        model.kind.as_str(),
        model.num_params(),
        model.num_trainable_params()
    );
    let mut indexes = match mode {
        TrainMode::Retrofit => {
            let all: Vec<Document> = train_docs.iter().chain(&val_docs).cloned().collect();
            Some(build_indexes(&model, &all, &tok)?)
        }
        _ => None,
    };
    let data = TrainData {
        train: &train_docs,
        val: &val_docs,
        tokenizer: &tok,
        indexes: indexes.as_mut(),
    };
    let mut csv = String::from(LossRecord::CSV_HEADER);
    csv.push('\n');
    let log_path = run.path(Path::new("loss.csv"));
    let records = train(&mut model, &mut trainer, data, mode, |r| {
        log::info!("{}", r.to_csv());
    })?;
    for r in &records {
        csv += &r.to_csv();
        csv.push('\n');
    }
    run.write(&log_path, csv.as_bytes())?;
    let ckpt = run.path(Path::new("model.ckpt"));
    save_model(&ckpt, &model, Some(&trainer))?;
    run.track(&ckpt);
    run.counters.insert("steps".into(), trainer.step);
    println!("{} steps -> {}", trainer.step, ckpt.display());
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    article_id: &'a str,
    prediction: String,
    retrieval_trace: Vec<TraceEntry>,
}

pub fn generate_cmd(run: &mut Run, split: Split, doc_id: Option<&str>, out: &Path) -> Result<()> {
    let cfg = run.config.clone();
    require(&[
        ("corpus directory", cfg.paths.corpus.as_deref()),
        ("tokenizer", cfg.paths.tokenizer.as_deref()),
        ("checkpoint", cfg.paths.checkpoint.as_deref()),
    ])?;
    if let Some(dir) = &cfg.paths.indexes {
        require(&[("index directory", Some(dir))])?;
    }
    let tok = load_tokenizer(run)?;
    let (model, _) = load_checkpoint(run)?;
    let mut docs = load_docs(run, split)?;
    if let Some(id) = doc_id {
        docs.retain(|d| d.article_id == id);
        ensure!(!docs.is_empty(), "document `{id}` not found in the {split} split");
    }
    let needs_index = cfg.generate.retrieval && model.kind == ModelKind::Retro;
    let opts = cfg.generate.clone();
    let results: Vec<(String, usize, usize)> = docs
        .par_iter()
        .map(|d| {
            let index = match (needs_index, &cfg.paths.indexes) {
                (false, _) => None,
                (true, Some(dir)) => Some(load_index(&dir.join(index_file_name(&d.article_id)))?),
                (true, None) => Some(index_document(&model, d, &tok)?),
            };
            let g = generate(&model, d, &tok, index.as_ref(), &opts)
                .with_context(|| format!("generating {}", d.article_id))?;
            let line = PredictionLine {
                article_id: &d.article_id,
                prediction: g.text,
                retrieval_trace: g.state.trace,
            };
            Ok((
                serde_json::to_string(&line)?,
                g.state.peak_self_attn_floats,
                g.state.peak_neighbor_floats,
            ))
        })
        .collect::<Result<_>>()?;
    let mut text = String::new();
    for (line, _, _) in &results {
        text += line;
        text.push('\n');
    }
    let peak_self = results.iter().map(|r| r.1).max().unwrap_or(0);
    let peak_nb = results.iter().map(|r| r.2).max().unwrap_or(0);
    run.counters.insert("peak_self_attn_floats".into(), peak_self as u64);
    run.counters.insert("peak_neighbor_floats".into(), peak_nb as u64);
    let path = run.write(out, text.as_bytes())?;
    println!("{} predictions -> {}", results.len(), path.display());
    Ok(())
}

pub fn evaluate_cmd(run: &mut Run, pred: &Path, split: Split, out: &Path) -> Result<()> {
    require(&[
        ("predictions file", Some(pred)),
        ("corpus directory", run.config.paths.corpus.as_deref()),
    ])?;
    run.input("predictions", pred)?;
    let text = std::fs::read_to_string(pred).with_context(|| format!("reading {}", pred.display()))?;
    let preds = read_predictions(&text)?;
    let docs = load_docs(run, split)?;
    let report = evaluate_corpus(&preds, &docs)?;
    run.write(out, report.to_csv().as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn bench(run: &mut Run, ns: &[usize], r: usize, k: usize, seed: u64) -> Result<()> {
    let mut csv = String::from(BenchRow::CSV_HEADER);
    csv.push('\n');
    for kind in [AttentionKind::FullCausal, AttentionKind::Tglobal, AttentionKind::ChunkedCross] {
        for &n in ns {
            let mut att = run.config.model.attention.clone();
            att.kind = kind;
            att.n = att.n.max(n);
            att.r = r;
            att.k = k;
            let row = bench_attention(&att, n, seed)?;
            log::info!("{}", row.to_csv());
            csv += &row.to_csv();
            csv.push('\n');
        }
    }
    run.write(Path::new("bench.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}
