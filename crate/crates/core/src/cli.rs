//! The `mrc` command line. Results go to stdout as JSON and diagnostics to
//! stderr. Exit status is 0 on success, 1 for invalid input or arguments
//! and 2 for I/O failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{dataset_stats, Dataset, SentenceIndex, DEFAULT_RETRIEVAL_K, STOPWORDS_VERSION};
use crate::ensemble::{back_and_forth_eval, evaluate_ensemble, parse_members, Ensemble};
use crate::error::{Error, Result};
use crate::model::{highlight_slots, Checkpoint, Head};
use crate::selfassess::{generate_corpus, GenConfig};
use crate::strategies::{Encoder, Label, OrderScheme};
use crate::text::{build_vocab, Tagger, Vocab};
use crate::train::{evaluate, run_pipeline, StagePlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mrc", version, about = "Reading-strategy fine-tuning for multiple-choice comprehension")]
pub struct Cli {
    /// Tab-separated `word<TAB>TAG` lexicon replacing the bundled one.
    #[arg(long, global = true, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate practice questions from plain-text documents (one per line).
    Gen(GenArgs),
    /// Attach retrieved sentences to every option of a corpus-only dataset.
    Retrieve(RetrieveArgs),
    /// Run a staged fine-tuning plan.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Evaluate a logit-averaging ensemble of checkpoints.
    Ensemble(EnsembleArgs),
    /// Show the input sequence and highlight bits for one option.
    Inspect(InspectArgs),
    /// Summary counts for a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_name = "PATH")]
    pub docs: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_q: usize,
    #[arg(long, default_value_t = 3)]
    pub n_s: usize,
    #[arg(long, default_value_t = 4)]
    pub n_c: usize,
    #[arg(long, default_value_t = 4)]
    pub n_t: usize,
    #[arg(long, default_value_t = 10)]
    pub max_attempts_per_question: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Reference corpus, one sentence per line.
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RETRIEVAL_K)]
    pub k: usize,
    /// Accept instances with several gold options.
    #[arg(long)]
    pub multi_answer: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    pub plan: PathBuf,
    /// Overrides the plan's initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the plan's run directory.
    #[arg(long, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Defaults to the scheme stored in the checkpoint.
    #[arg(long)]
    pub scheme: Option<OrderScheme>,
    /// Multi-answer evaluation with per-option decisions.
    #[arg(long)]
    pub sigmoid: bool,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Comma-separated `PATH:SCHEME` list.
    #[arg(long, value_name = "LIST")]
    pub members: String,
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Require exactly two members trained under a scheme and its reverse.
    #[arg(long)]
    pub back_and_forth: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 0)]
    pub option: usize,
    #[arg(long, default_value = "dq_o")]
    pub scheme: OrderScheme,
    #[arg(long, default_value_t = 256)]
    pub max_len: usize,
    /// Take the vocabulary from this checkpoint instead of the dataset.
    #[arg(long, value_name = "PATH")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long)]
    pub multi_answer: bool,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit status.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(rendered.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = stderr.write_all(rendered.as_bytes());
                    EXIT_INVALID
                }
            };
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("results serialize");
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn load_tagger(path: &Option<PathBuf>) -> Result<Tagger> {
    match path {
        Some(p) => Tagger::from_file(p),
        None => Ok(Tagger::bundled().clone()),
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a, stdout),
        Command::Retrieve(a) => retrieve(a, stdout),
        Command::Train(a) => train(a, &cli.lexicon, stdout, stderr),
        Command::Eval(a) => eval(a, &load_tagger(&cli.lexicon)?, stdout),
        Command::Ensemble(a) => ensemble(a, &load_tagger(&cli.lexicon)?, stdout),
        Command::Inspect(a) => inspect(a, &load_tagger(&cli.lexicon)?, stdout),
        Command::Stats(a) => {
            let data = Dataset::load_jsonl(&a.data, a.multi_answer)?;
            emit(stdout, &dataset_stats(&data))
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Serialize)]
struct GenOutput {
    out: PathBuf,
    config: GenConfig,
    #[serde(flatten)]
    stats: crate::selfassess::GenStats,
}

fn gen(a: GenArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = GenConfig {
        n_q: a.n_q,
        n_s: a.n_s,
        n_c: a.n_c,
        n_t: a.n_t,
        seed: a.seed,
        max_attempts_per_question: a.max_attempts_per_question,
    };
    let docs = read_lines(&a.docs)?;
    let (data, stats) = generate_corpus(&docs, &cfg)?;
    data.save_jsonl(&a.out)?;
    emit(
        stdout,
        &GenOutput {
            out: a.out,
            config: cfg,
            stats,
        },
    )
}

#[derive(Serialize)]
struct RetrieveOutput {
    out: PathBuf,
    instances: usize,
    corpus_sentences: usize,
    k: usize,
    stopwords_version: u32,
}

fn retrieve(a: RetrieveArgs, stdout: &mut dyn Write) -> Result<()> {
    if a.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut data = Dataset::load_jsonl(&a.data, a.multi_answer)?;
    let index = SentenceIndex::load(&a.corpus)?;
    index.attach_documents(&mut data, a.k);
    data.save_jsonl(&a.out)?;
    emit(
        stdout,
        &RetrieveOutput {
            out: a.out,
            instances: data.len(),
            corpus_sentences: index.len(),
            k: a.k,
            stopwords_version: STOPWORDS_VERSION,
        },
    )
}

#[derive(Serialize)]
struct TrainOutput {
    checkpoint: Option<PathBuf>,
    stage_checkpoints: Vec<PathBuf>,
    stages: Vec<crate::train::TrainReport>,
}

fn train(a: TrainArgs, lexicon: &Option<PathBuf>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let mut plan = StagePlan::load(&a.plan)?;
    if let Some(seed) = a.seed {
        plan.seed = seed;
    }
    if let Some(dir) = a.run_dir {
        plan.run_dir = Some(dir);
    }
    if lexicon.is_some() {
        plan.lexicon = lexicon.clone();
    }
    let out = run_pipeline(&plan)?;
    for r in &out.reports {
        let _ = writeln!(
            stderr,
            "stage {}: {} epochs, selected epoch {} ({} {:?}), {:.1}s",
            r.stage,
            r.epochs.len(),
            r.selected_epoch,
            r.selection_metric,
            r.selected_value,
            r.wall_time_secs
        );
    }
    emit(
        stdout,
        &TrainOutput {
            checkpoint: out.stage_checkpoints.last().cloned(),
            stage_checkpoints: out.stage_checkpoints,
            stages: out.reports,
        },
    )
}

#[derive(Serialize)]
struct EvalOutput {
    checkpoint: PathBuf,
    scheme: OrderScheme,
    head: Head,
    metrics: crate::train::Metrics,
}

fn eval(a: EvalArgs, tagger: &Tagger, stdout: &mut dyn Write) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let head = if a.sigmoid { Head::Sigmoid } else { ck.head };
    let data = Dataset::load_jsonl(&a.data, head == Head::Sigmoid)?;
    let scheme = a.scheme.unwrap_or_else(|| ck.scheme.clone());
    let metrics = evaluate(&ck.model, &ck.vocab, tagger, &data, &scheme, head)?;
    emit(
        stdout,
        &EvalOutput {
            checkpoint: a.ckpt,
            scheme,
            head,
            metrics,
        },
    )
}

fn ensemble(a: EnsembleArgs, tagger: &Tagger, stdout: &mut dyn Write) -> Result<()> {
    let specs = parse_members(&a.members)?;
    let ens = Ensemble::load(&specs)?;
    let data = Dataset::load_jsonl(&a.data, ens.head() == Head::Sigmoid)?;
    let report = if a.back_and_forth {
        let [fwd, bwd] = ens.members() else {
            return Err(Error::invalid("--back-and-forth needs exactly two members"));
        };
        if fwd.scheme != fwd.checkpoint.scheme || bwd.scheme != bwd.checkpoint.scheme {
            return Err(Error::invalid("member schemes must match the schemes stored in their checkpoints"));
        }
        back_and_forth_eval(fwd.checkpoint.clone(), bwd.checkpoint.clone(), &fwd.scheme, &data, tagger)?
    } else {
        evaluate_ensemble(&ens, &data, tagger)?
    };
    emit(stdout, &report)
}

#[derive(Debug, Serialize)]
pub struct InspectToken {
    pub position: usize,
    pub surface: String,
    pub id: u32,
    pub label: Label,
    /// Highlight bit; present only at document positions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub highlight: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct InspectOutput {
    pub id: String,
    pub option: usize,
    pub scheme: OrderScheme,
    /// Highlight bits over the kept document tokens.
    pub mask: Vec<bool>,
    pub tokens: Vec<InspectToken>,
}

fn inspect(a: InspectArgs, tagger: &Tagger, stdout: &mut dyn Write) -> Result<()> {
    let data = Dataset::load_jsonl(&a.data, true)?;
    let inst = data
        .instances
        .get(a.index)
        .ok_or_else(|| Error::invalid(format!("index {} out of range for {} instances", a.index, data.len())))?;
    if a.option >= inst.options.len() {
        return Err(Error::invalid(format!(
            "option {} out of range for {} options",
            a.option,
            inst.options.len()
        )));
    }
    let (vocab, max_len): (Vocab, usize) = match &a.ckpt {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let len = ck.model.config.max_len;
            (ck.vocab, len)
        }
        None => {
            let texts: Vec<&str> = data.texts().collect();
            (build_vocab(&texts, usize::MAX)?, a.max_len)
        }
    };
    let encoder = Encoder::new(&vocab, tagger, a.scheme.clone(), max_len);
    let input = encoder.encode_option(inst, a.option)?;
    let slots = highlight_slots(&input);
    let doc_words = crate::text::tokenize(inst.document_for(a.option));
    let q_words = crate::text::tokenize(&inst.question);
    let o_words = crate::text::tokenize(&inst.options[a.option]);
    let (mut qi, mut oi) = (0, 0);
    let tokens = (0..input.seq.len())
        .map(|p| {
            let label = input.seq.labels[p];
            let surface = match label {
                Label::Start => "[".to_string(),
                Label::Delim => "$".to_string(),
                Label::End => "]".to_string(),
                Label::Document => doc_words[input.seq.doc_index[p].expect("document position")].clone(),
                Label::Question => {
                    qi += 1;
                    q_words[qi - 1].clone()
                }
                Label::Option => {
                    oi += 1;
                    o_words[oi - 1].clone()
                }
            };
            InspectToken {
                position: p,
                surface,
                id: input.seq.ids[p],
                label,
                highlight: slots[p],
            }
        })
        .collect();
    let out = InspectOutput {
        id: inst.id.clone(),
        option: a.option,
        scheme: a.scheme,
        mask: input.mask.0.clone(),
        tokens,
    };
    if a.json {
        return emit(stdout, &out);
    }
    let io = |e| Error::io("<stdout>", e);
    writeln!(stdout, "{} option {} under {}", out.id, out.option, out.scheme).map_err(io)?;
    for t in &out.tokens {
        let bit = match t.highlight {
            Some(true) => "1",
            Some(false) => "0",
            None => "-",
        };
        let label = serde_json::to_value(t.label).expect("label serializes");
        writeln!(
            stdout,
            "{:>4}  {:<9} {}  {}",
            t.position,
            label.as_str().unwrap_or(""),
            bit,
            t.surface
        )
        .map_err(io)?;
    }
    Ok(())
}
