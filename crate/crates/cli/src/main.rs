//! `forge`: preprocess, align, train, decode and evaluate from the shell.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "forge", version, about = "Data-to-text generators bootstrapped from loosely aligned data")]
struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set generator.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic biography corpus with planted alignments.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        distractor_rate: f64,
        #[arg(long, default_value = "synthetic.jsonl")]
        out: PathBuf,
        #[arg(long, default_value = "synthetic.gold.tsv")]
        gold: PathBuf,
        /// Distractor-free reference texts.
        #[arg(long, default_value = "synthetic.refs.txt")]
        refs: PathBuf,
    },
    /// Normalise, delexicalise, apply vocabularies and filter a corpus.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML file of filter limits.
        #[arg(long)]
        filter_config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "generator")]
        kind: CorpusKind,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Corpus statistics as JSON.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Content aligner.
    Align {
        #[command(subcommand)]
        command: AlignCommand,
    },
    /// Generators.
    Gen {
        #[command(subcommand)]
        command: GenCommand,
    },
    /// Rule-based baseline texts.
    Template {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tab-separated `priority property template` rules.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Evaluation.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Reruns the command recorded in a manifest and compares the results.
    Rerun { manifest: PathBuf },
}

#[derive(Subcommand, Debug)]
enum AlignCommand {
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Where to write the JSON report; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum GenCommand {
    Train {
        #[arg(long, value_enum, default_value = "base")]
        mode: TrainMode,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        alignments: Option<PathBuf>,
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    Bleu {
        #[arg(long)]
        cand: PathBuf,
        /// One or more reference files, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        refs: Vec<PathBuf>,
        #[arg(long)]
        first_sentence: bool,
        /// Add-one smoothing for debugging short texts; not comparable
        /// with the default unsmoothed score.
        #[arg(long)]
        smoothed: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusKind {
    Aligner,
    Generator,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Base,
    Mtl,
    Rl,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Sample,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &forge_core::Error) -> u8 {
    use forge_core::Error;
    match e {
        _ if e.is_numeric() => EXIT_NUMERIC,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn dispatch(cli: Cli, argv: &[String]) -> forge_core::Result<()> {
    use commands as c;
    match cli.command {
        Command::Synth {
            seed,
            n,
            distractor_rate,
            out,
            gold,
            refs,
        } => c::synth(argv, seed, n, distractor_rate, &out, &gold, &refs),
        Command::Preprocess {
            input,
            out,
            filter_config,
            kind,
            config,
        } => c::preprocess_cmd(argv, &input, &out, filter_config.as_deref(), kind, &config),
        Command::Stats { input } => c::stats(&input),
        Command::Align { command } => match command {
            AlignCommand::Train { corpus, out, config } => c::align_train(argv, corpus, out, &config),
            AlignCommand::Extract { checkpoint, input, out } => c::align_extract(argv, &checkpoint, &input, &out),
            AlignCommand::Score {
                checkpoint,
                input,
                gold,
                out,
            } => c::align_score(argv, &checkpoint, &input, &gold, out.as_deref()),
        },
        Command::Gen { command } => match command {
            GenCommand::Train {
                mode,
                corpus,
                alignments,
                init_checkpoint,
                out,
                config,
            } => c::gen_train(argv, mode, corpus, alignments, init_checkpoint, out, &config),
            GenCommand::Decode {
                checkpoint,
                input,
                out,
                strategy,
                seed,
            } => c::gen_decode(argv, &checkpoint, &input, &out, strategy, seed),
        },
        Command::Template { input, out, rules } => c::template(argv, &input, &out, rules.as_deref()),
        Command::Eval { command } => match command {
            EvalCommand::Bleu {
                cand,
                refs,
                first_sentence,
                smoothed,
                out,
            } => c::eval_bleu(argv, &cand, &refs, first_sentence, smoothed, out.as_deref()),
        },
        Command::Rerun { manifest } => c::rerun(&manifest, run),
    }
}

/// Parses and runs one invocation; `argv` excludes the program name.
fn run(argv: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(std::iter::once("forge".to_string()).chain(argv.iter().cloned())) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).try_init();
    match dispatch(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("forge: {e}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    ExitCode::from(run(&argv))
}
