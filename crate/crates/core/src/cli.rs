//! `cyst` command-line interface.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::corpus::{
    detokenize, load_styled_corpus, read_lines, synth_sentences, CorpusLimits, SplitRatios, Style,
    StyledCorpus, SubstitutionOracle, SynthConfig, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{run_ablations, EmbeddingTable, Evaluator};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::train::train;

/// Process exit status for an error: 2 configuration, 3 numerical abort,
/// 4 I/O or unreadable input, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        Error::Numerical { .. } => 3,
        Error::Io { .. } | Error::Format(_) | Error::Data(_) => 4,
        _ => 1,
    }
}

macro_rules! overrides {
    ($($field:ident),* ; $($switch:ident),*) => {
        /// Run configuration: `--config FILE` plus one flag per key; flags
        /// win over the file.
        #[derive(Debug, Clone, Default, Args)]
        pub struct Overrides {
            /// `key = value` configuration file.
            #[arg(long)]
            pub config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE")]
                pub $field: Option<String>,
            )*
            $(
                #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
                pub $switch: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $( if let Some(v) = &self.$field { out.push((stringify!($field), v.as_str())); } )*
                $( if let Some(v) = &self.$switch { out.push((stringify!($switch), v.as_str())); } )*
                out
            }
        }
    };
}

overrides!(
    hidden, emb, cls_emb, filters, widths, lr, batch, max_epochs, patience, warmup_epochs, pretrain_epochs,
    tau_initial, tau_decay, tau_floor, max_gen_len, w_rec, w_class_td, w_class_od, w_back_rec, w_class_btd, seed,
    min_freq, lm_emb, lm_hidden, lm_lr, lm_batch, lm_epochs, lm_patience, lm_seed, judge_emb, judge_filters,
    judge_lr, judge_batch, judge_epochs, judge_seed, data, vocab, checkpoint, embeddings, report;
    no_attention, no_back_transfer
);

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for (key, value) in self.pairs() {
            cfg.set(key, value, &format!("flag --{}", key.replace('_', "-")))?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cyst",
    version,
    about = "Offensive to non-offensive text style transfer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-style corpus with its substitution oracle.
    GenSynth(GenSynthArgs),
    /// Train a model and write the best checkpoint and the epoch log.
    Train(TrainArgs),
    /// Transfer sentences from style 0 to style 1, one per line.
    Transfer(TransferArgs),
    /// Score transferred sentences: accuracy, content preservation, perplexity.
    Evaluate(EvaluateArgs),
    /// Train and evaluate the four ablation variants.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Total vocabulary size, reserved ids included.
    #[arg(long, default_value_t = 60)]
    pub vocab: usize,
    #[arg(long, default_value_t = 8)]
    pub marked: usize,
    #[arg(long, default_value_t = 2000)]
    pub per_style: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: Overrides,
    /// Checkpoint path (same as `--checkpoint`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Epoch log path; defaults to the checkpoint path plus `.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub run: Overrides,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: Overrides,
    /// Style-0 sentences that were transferred.
    #[arg(long)]
    pub source: PathBuf,
    /// Transferred sentences, aligned line by line with `--source`.
    #[arg(long)]
    pub transferred: PathBuf,
    /// Judge accuracy with `oracle.tsv` from the data directory instead of
    /// a trained classifier.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: Overrides,
    #[arg(long)]
    pub oracle: bool,
    /// Output table path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            return Err(Error::Config {
                key: "arguments".into(),
                location: "command line".into(),
                message: e.to_string(),
            })
        }
    };
    match cli.command {
        Command::GenSynth(a) => gen_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn lines_text<S: AsRef<str>>(sentences: &[Vec<S>]) -> String {
    sentences
        .iter()
        .map(|s| format!("{}\n", detokenize(s)))
        .collect()
}

pub const SYNTH_FILES: [&str; 4] = ["style0.txt", "style1.txt", "oracle.tsv", "manifest.txt"];

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        vocab_size: a.vocab,
        n_marked: a.marked,
        per_style: a.per_style,
        min_len: a.min_len,
        max_len: a.max_len,
        seed: a.seed,
        split: SplitRatios::default(),
    };
    let (styles, pairs) = synth_sentences(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let paths: Vec<PathBuf> = SYNTH_FILES.iter().map(|f| a.out.join(f)).collect();
    if !a.force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(Error::io(
                p,
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    "refusing to overwrite without --force",
                ),
            ));
        }
    }
    write(&paths[0], &lines_text(&styles[0]))?;
    write(&paths[1], &lines_text(&styles[1]))?;
    let oracle: String = pairs.iter().map(|(m, n)| format!("{m}\t{n}\n")).collect();
    write(&paths[2], &oracle)?;
    let manifest = format!(
        "generator = synthetic-substitution\nseed = {}\nvocab = {}\nmarked = {}\nper_style = {}\nmin_len = {}\nmax_len = {}\n",
        a.seed, a.vocab, a.marked, a.per_style, a.min_len, a.max_len
    );
    write(&paths[3], &manifest)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    value.as_ref().ok_or_else(|| Error::Config {
        key: key.to_string(),
        location: "command line".into(),
        message: format!("missing --{key}"),
    })
}

fn load_corpus(cfg: &RunConfig) -> Result<StyledCorpus> {
    let data = required(&cfg.data, "data")?;
    let vocab = cfg
        .vocab
        .as_ref()
        .map(|p| Vocabulary::load(p))
        .transpose()?;
    load_styled_corpus(
        &data.join("style0.txt"),
        &data.join("style1.txt"),
        vocab,
        cfg.min_freq,
        CorpusLimits::default(),
        SplitRatios::default(),
    )
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.run.resolve()?;
    if let Some(out) = &a.out {
        cfg.checkpoint = Some(out.clone());
    }
    let ckpt = required(&cfg.checkpoint, "checkpoint")?.clone();
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = ckpt.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let corpus = load_corpus(&cfg)?;
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(
        log,
        "epoch\trec\tclass_td\tclass_od\tback_rec\tclass_btd\ttotal\tdev_total"
    )
    .map_err(|e| Error::io(&log_path, e))?;
    let outcome = train(&corpus, &cfg.train, |record, improved, model| {
        let line = record.log_line();
        eprintln!("{line}{}", if improved { "\t*" } else { "" });
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if improved {
            save_checkpoint(model, &ckpt)?;
        }
        Ok(())
    })?;
    eprintln!(
        "best epoch {}; checkpoint {}",
        outcome.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn encode_lines(vocab: &Vocabulary, path: &Path) -> Result<Vec<Vec<usize>>> {
    Ok(read_lines(path)?.iter().map(|s| vocab.encode(s)).collect())
}

fn cmd_transfer(a: &TransferArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let model = load_checkpoint(required(&cfg.checkpoint, "checkpoint")?)?;
    let inputs = encode_lines(&model.vocab, &a.input)?;
    let outputs = model.transfer(&inputs, Style::Source, Style::Target)?;
    let decoded: Vec<Vec<String>> = outputs.iter().map(|o| model.vocab.decode(o)).collect();
    write(&a.output, &lines_text(&decoded))
}

fn evaluator(cfg: &RunConfig, corpus: &StyledCorpus, use_oracle: bool) -> Result<Evaluator> {
    let oracle = if use_oracle {
        let data = required(&cfg.data, "data")?;
        Some(SubstitutionOracle::load(
            &data.join("oracle.tsv"),
            &corpus.vocab,
        )?)
    } else {
        None
    };
    let embeddings = cfg
        .embeddings
        .as_ref()
        .map(|p| EmbeddingTable::load(p))
        .transpose()?;
    Evaluator::build(corpus, oracle.as_ref(), embeddings, &cfg.eval)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let corpus = load_corpus(&cfg)?;
    let sources = encode_lines(&corpus.vocab, &a.source)?;
    let transferred = encode_lines(&corpus.vocab, &a.transferred)?;
    if sources.len() != transferred.len() {
        return Err(Error::Data(format!(
            "{} has {} lines but {} has {}",
            a.source.display(),
            sources.len(),
            a.transferred.display(),
            transferred.len()
        )));
    }
    let report = evaluator(&cfg, &corpus, a.oracle)?.evaluate(&sources, &transferred)?;
    if let Some(path) = &cfg.report {
        report.save(path)?;
    }
    println!("{}", report.summary_line());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let corpus = load_corpus(&cfg)?;
    let ev = evaluator(&cfg, &corpus, a.oracle)?;
    let rows = run_ablations(&corpus, &cfg.train, &ev)?;
    let mut table = String::from("variant\tacc\tcp\tppl\n");
    for r in &rows {
        table.push_str(&r.table_line());
        table.push('\n');
    }
    write(&a.out, &table)?;
    print!("{table}");
    Ok(())
}
