mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use retrosum::corpus::Split;
use retrosum::model::{Strategy, TrainMode};

use config::RunConfig;
use run::Run;

#[derive(Parser, Debug)]
#[command(name = "retrosum", version, about = "Retrieval-enhanced summarization of long documents")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving every output file, `run.json` and `manifest.json`.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = "RETROSUM_THREADS")]
    threads: Option<usize>,
    /// Root seed for the model, training, subset sampling and decoding.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    tokenizer: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    indexes: Option<PathBuf>,
    /// Fraction of each split to use, sampled with the root seed.
    #[arg(long, global = true)]
    subset: Option<f64>,
    /// Skip malformed corpus records instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    /// Override any config key: `--set train.lr=3e-4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Pretrain,
    Retrofit,
    Encdec,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Pretrain => TrainMode::PretrainBase,
            Mode::Retrofit => TrainMode::Retrofit,
            Mode::Encdec => TrainMode::Encdec,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a byte-pair tokenizer on the train split.
    TrainTokenizer {
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long, default_value = "tokenizer.json")]
        out: PathBuf,
    },
    /// Parse the corpus splits and report dataset statistics.
    Ingest {
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [SplitArg::Train, SplitArg::Val, SplitArg::Test])]
        splits: Vec<SplitArg>,
    },
    /// Write one retrieval index per document.
    BuildIndex {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long, default_value = "indexes")]
        out: PathBuf,
    },
    /// Pretrain the base decoder, retro-fit it, or train the encoder-decoder.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        accumulation: Option<usize>,
        #[arg(long)]
        micro_batch: Option<usize>,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Summarize documents; writes JSON lines with the retrieval trace.
    Generate {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Only this document.
        #[arg(long)]
        doc_id: Option<String>,
        #[arg(long, value_enum)]
        retrieval: Option<OnOff>,
        /// `greedy`, `topk:K` or `temperature:T`.
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Neighbor continuation chunks.
        #[arg(long, value_enum)]
        continuation: Option<OnOff>,
        #[arg(long, default_value = "predictions.jsonl")]
        out: PathBuf,
    },
    /// Score predictions with ROUGE against a corpus split.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Time full, TGlobal and chunked cross-attention and count pairs.
    BenchAttention {
        #[arg(long, value_delimiter = ',', default_values_t = [256, 1024, 4096])]
        n: Vec<usize>,
        #[arg(long, default_value_t = 127)]
        r: usize,
        #[arg(long, default_value_t = 16)]
        k: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainTokenizer { .. } => "train-tokenizer",
            Command::Ingest { .. } => "ingest",
            Command::BuildIndex { .. } => "build-index",
            Command::Train { .. } => "train",
            Command::Generate { .. } => "generate",
            Command::Evaluate { .. } => "evaluate",
            Command::BenchAttention { .. } => "bench-attention",
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.corpus, &c.corpus),
        (&mut paths.tokenizer, &c.tokenizer),
        (&mut paths.checkpoint, &c.checkpoint),
        (&mut paths.indexes, &c.indexes),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    if let Some(f) = c.subset {
        cfg.subset.fraction = f;
    }
    cfg.lenient |= c.lenient;
    match &cli.command {
        Command::TrainTokenizer { vocab_size, .. } => {
            if let Some(v) = vocab_size {
                cfg.vocab_size = *v;
            }
        }
        Command::Train {
            epochs,
            lr,
            accumulation,
            micro_batch,
            max_steps,
            resume,
            ..
        } => {
            let t = &mut cfg.train;
            t.epochs = epochs.unwrap_or(t.epochs);
            t.lr = lr.unwrap_or(t.lr);
            t.accumulation = accumulation.unwrap_or(t.accumulation);
            t.micro_batch = micro_batch.unwrap_or(t.micro_batch);
            t.max_steps = max_steps.or(t.max_steps);
            if resume.is_some() {
                cfg.paths.resume = resume.clone();
            }
        }
        Command::Generate {
            retrieval,
            strategy,
            max_len,
            continuation,
            ..
        } => {
            let g = &mut cfg.generate;
            if let Some(r) = retrieval {
                g.retrieval = matches!(r, OnOff::On);
            }
            g.strategy = strategy.unwrap_or(g.strategy);
            g.max_len = max_len.unwrap_or(g.max_len);
            if let Some(c) = continuation {
                cfg.model.attention.neighbor_continuation = matches!(c, OnOff::On);
            }
        }
        _ => {}
    }
    cfg.with_overrides(&c.sets)
}

fn execute(cli: &Cli, run: &mut Run) -> Result<()> {
    match &cli.command {
        Command::TrainTokenizer { out, .. } => commands::train_tok(run, out),
        Command::Ingest { splits } => {
            let splits: Vec<Split> = splits.iter().map(|&s| s.into()).collect();
            commands::ingest(run, &splits)
        }
        Command::BuildIndex { split, out } => commands::build_index(run, (*split).into(), out),
        Command::Train { mode, .. } => commands::train_cmd(run, (*mode).into()),
        Command::Generate { split, doc_id, out, .. } => {
            commands::generate_cmd(run, (*split).into(), doc_id.as_deref(), out)
        }
        Command::Evaluate { pred, split, out } => commands::evaluate_cmd(run, pred, (*split).into(), out),
        Command::BenchAttention { n, r, k } => {
            let seed = run.config.model.seed;
            commands::bench(run, n, *r, *k, seed)
        }
    }
}

fn real_main(cli: Cli) -> Result<()> {
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let threads = cli.common.threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("starting the worker pool")?;
    let config = resolve_config(&cli)?;
    let argv: Vec<String> = std::env::args().collect();
    let mut run = Run::start(
        &cli.common.out_dir,
        cli.command.name(),
        argv,
        config,
        rayon::current_num_threads(),
    )?;
    let result = execute(&cli, &mut run);
    run.finish(result.as_ref().err())?;
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
