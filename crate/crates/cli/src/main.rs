//! Pipeline entry point: data synthesis/ingestion, tokenizer and shard
//! building, pre-training, metric evaluation, sampling, and fine-tuning.

mod config;
mod pipeline;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::RunConfig;
use pipeline::{BuildDataOpts, EvalOpts, FinetuneOpts, SampleOpts, Task, TrainOpts};
use std::path::PathBuf;
use unitext::builder::SeqFormat;
use unitext::vocab::Modality;

#[derive(Parser)]
#[command(name = "unitext", version, about = "Joint speech-unit/text language modeling pipeline")]
struct Cli {
    /// TOML config file; environment variables and flags override it.
    #[arg(long, global = true, env = "UNITEXT_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed for splits, parameter init, training, and sampling.
    #[arg(long, global = true, env = "UNITEXT_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Ulm,
    Tlm,
    Cst,
    Ast,
    All,
}

impl FormatArg {
    fn formats(self) -> Vec<SeqFormat> {
        match self {
            FormatArg::Ulm => vec![SeqFormat::Ulm],
            FormatArg::Tlm => vec![SeqFormat::Tlm],
            FormatArg::Cst => vec![SeqFormat::Cst],
            FormatArg::Ast => vec![SeqFormat::Ast],
            FormatArg::All => vec![SeqFormat::Ulm, SeqFormat::Tlm, SeqFormat::Cst, SeqFormat::Ast],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    U,
    T,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Modality {
        match m {
            ModalityArg::U => Modality::Speech,
            ModalityArg::T => Modality::Text,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Sa,
    Ner,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize or ingest a corpus, train tokenizers, and build token shards.
    BuildData(BuildDataArgs),
    /// Pre-train the joint LM on built shards.
    Train(TrainArgs),
    /// Compute CRA, PELM, and repetition metrics against a checkpoint.
    Eval(EvalArgs),
    /// Dump modality-constrained continuations for eval-set prompts.
    Sample(SampleArgs),
    /// Fine-tune on a downstream task and print the 2x2 transfer table.
    Finetune(FinetuneArgs),
}

#[derive(Args)]
struct BuildDataArgs {
    #[arg(long, env = "UNITEXT_OUT")]
    out: PathBuf,
    /// Ingest this manifest instead of synthesizing a corpus.
    #[arg(long, env = "UNITEXT_MANIFEST")]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all", env = "UNITEXT_FORMAT")]
    format: FormatArg,
    #[arg(long, env = "UNITEXT_VOCAB_SIZE_UNITS")]
    vocab_size_units: Option<usize>,
    #[arg(long, env = "UNITEXT_VOCAB_SIZE_TEXT")]
    vocab_size_text: Option<usize>,
    #[arg(long, env = "UNITEXT_N_SENTENCES")]
    n_sentences: Option<usize>,
    /// Also write human-readable sequence dumps.
    #[arg(long, env = "UNITEXT_DUMP")]
    dump: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = "UNITEXT_DATA")]
    data: PathBuf,
    #[arg(long, env = "UNITEXT_OUT")]
    out: PathBuf,
    /// Comma-separated shard kinds to train on, e.g. "ulm,cst,ast,tlm".
    #[arg(long, default_value = "ulm,cst,ast,tlm", env = "UNITEXT_STREAMS")]
    streams: String,
    #[arg(long, env = "UNITEXT_MAX_UPDATES")]
    max_updates: Option<u64>,
    #[arg(long, env = "UNITEXT_LR")]
    lr: Option<f64>,
    #[arg(long, env = "UNITEXT_TOKENS_PER_BATCH")]
    tokens_per_batch: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "UNITEXT_DATA")]
    data: PathBuf,
    #[arg(long, env = "UNITEXT_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "UNITEXT_OUT")]
    out: PathBuf,
    #[arg(long, default_value = "dev", env = "UNITEXT_SPLIT")]
    split: String,
    #[arg(long, env = "UNITEXT_CRA_M")]
    cra_m: Option<usize>,
    #[arg(long, env = "UNITEXT_PELM_N")]
    pelm_n: Option<usize>,
    #[arg(long, env = "UNITEXT_TEMPERATURE")]
    temperature: Option<f64>,
    #[arg(long, env = "UNITEXT_NUCLEUS_P")]
    nucleus_p: Option<f64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, env = "UNITEXT_DATA")]
    data: PathBuf,
    #[arg(long, env = "UNITEXT_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "UNITEXT_OUT")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "u", env = "UNITEXT_MODALITY_PROMPT")]
    modality_prompt: ModalityArg,
    #[arg(long, value_enum, default_value = "t", env = "UNITEXT_MODALITY_CONT")]
    modality_cont: ModalityArg,
    #[arg(long, default_value_t = 10, env = "UNITEXT_N_SAMPLES")]
    n: usize,
    #[arg(long, env = "UNITEXT_TEMPERATURE")]
    temperature: Option<f64>,
    #[arg(long, env = "UNITEXT_NUCLEUS_P")]
    nucleus_p: Option<f64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long, env = "UNITEXT_DATA")]
    data: PathBuf,
    #[arg(long, env = "UNITEXT_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "UNITEXT_OUT")]
    out: PathBuf,
    #[arg(long, value_enum, env = "UNITEXT_TASK")]
    task: TaskArg,
    #[arg(long, env = "UNITEXT_FT_UPDATES")]
    updates: Option<u64>,
}

fn parse_streams(streams: &str) -> Result<Vec<SeqFormat>> {
    streams
        .split(',')
        .map(|s| match s.trim() {
            "ulm" => Ok(SeqFormat::Ulm),
            "tlm" => Ok(SeqFormat::Tlm),
            "cst" => Ok(SeqFormat::Cst),
            "ast" => Ok(SeqFormat::Ast),
            other => anyhow::bail!("unknown stream kind {other:?}"),
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.cmd {
        Cmd::BuildData(args) => {
            if let Some(v) = args.vocab_size_units {
                cfg.tokenizer.vocab_size_units = v;
            }
            if let Some(v) = args.vocab_size_text {
                cfg.tokenizer.vocab_size_text = v;
            }
            if let Some(v) = args.n_sentences {
                cfg.corpus.n_sentences = v;
            }
            pipeline::build_data(
                &cfg,
                &BuildDataOpts {
                    out: args.out,
                    manifest: args.manifest,
                    formats: args.format.formats(),
                    dump: args.dump,
                },
            )
        }
        Cmd::Train(args) => {
            if let Some(v) = args.max_updates {
                cfg.train.max_updates = v;
            }
            if let Some(v) = args.lr {
                cfg.train.lr = v;
            }
            if let Some(v) = args.tokens_per_batch {
                cfg.train.tokens_per_batch = v;
            }
            pipeline::train_cmd(
                &cfg,
                &TrainOpts {
                    data: args.data,
                    out: args.out,
                    streams: parse_streams(&args.streams)?,
                },
            )
        }
        Cmd::Eval(args) => {
            if let Some(v) = args.cra_m {
                cfg.eval.cra_m = v;
            }
            if let Some(v) = args.pelm_n {
                cfg.eval.pelm_n = v;
            }
            if let Some(v) = args.temperature {
                cfg.eval.temperature = v;
            }
            if let Some(v) = args.nucleus_p {
                cfg.eval.nucleus_p = v;
            }
            pipeline::eval_cmd(
                &cfg,
                &EvalOpts {
                    data: args.data,
                    checkpoint: args.checkpoint,
                    out: args.out,
                    split: args.split,
                },
            )
        }
        Cmd::Sample(args) => pipeline::sample_cmd(
            &cfg,
            &SampleOpts {
                data: args.data,
                checkpoint: args.checkpoint,
                out: args.out,
                prompt_modality: args.modality_prompt.into(),
                cont_modality: args.modality_cont.into(),
                n: args.n,
                temperature: args.temperature,
                nucleus_p: args.nucleus_p,
            },
        ),
        Cmd::Finetune(args) => {
            if let Some(v) = args.updates {
                cfg.finetune.sa_updates = v;
                cfg.finetune.ner_updates = v;
            }
            pipeline::finetune_cmd(
                &cfg,
                &FinetuneOpts {
                    data: args.data,
                    checkpoint: args.checkpoint,
                    out: args.out,
                    task: match args.task {
                        TaskArg::Sa => Task::Sa,
                        TaskArg::Ner => Task::Ner,
                    },
                },
            )
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        // Machine-readable error record on stderr.
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
