//! `longdoc` command line: `gen-corpus | train | eval | predict | stats`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autograd::ParamStore;
use crate::config::{EncoderKind, RunConfig, RESOLVED_CONFIG_FILE};
use crate::corpus::{format_cdf, length_cdf, load_corpus, LabelSet, Note};
use crate::error::{Error, IoContext, Result};
use crate::metrics::{best_threshold, default_grid, evaluate, PredictionSet};
use crate::model::{Classifier, Model, TextPipeline};
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::tokenizer::{basic_split, Tokenizer, Vocab};
use crate::training::{train_loop, Example, LogRow, TrainObserver, LOG_HEADER};

#[derive(Parser, Debug)]
#[command(name = "longdoc", version, about = "Long-document multi-label classification with per-label attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-evidence synthetic corpus.
    GenCorpus(GenArgs),
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Rank codes for one note.
    Predict(PredictArgs),
    /// Token-length CDF of a corpus.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings file (`key = value`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_codes: Option<usize>,
    /// Distinct filler words.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Note length in tokens, `N` or `MIN:MAX`.
    #[arg(long, value_parser = parse_range)]
    pub doc_len: Option<(usize, usize)>,
    /// Evidence start positions, `LO:HI`.
    #[arg(long, value_parser = parse_range)]
    pub placement: Option<(usize, usize)>,
    /// Codes per note, `N` or `MIN:MAX`.
    #[arg(long, value_parser = parse_range)]
    pub codes_per_note: Option<(usize, usize)>,
    #[arg(long)]
    pub phrases_per_code: Option<usize>,
    #[arg(long)]
    pub phrase_len: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Settings file (`key = value`, keys as the long flags with `_`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus to report metrics on.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Validation corpus for the threshold grid search.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Fixed decision threshold; skips the grid search.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Code list whose size must match the checkpoint.
    #[arg(long)]
    pub codes: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Note text.
    #[arg(long, conflicts_with = "text_file")]
    pub text: Option<String>,
    /// File holding the note text.
    #[arg(long)]
    pub text_file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Count WordPiece tokens with this vocabulary.
    #[arg(long, conflicts_with = "checkpoint")]
    pub vocab: Option<PathBuf>,
    /// Count tokens with a checkpoint's text pipeline.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    match s.split_once(':') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

/// Usage problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult = std::result::Result<(), CliError>;

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(a, out),
        Command::Train(a) => cmd_train(a, out, err),
        Command::Eval(a) => cmd_eval(a, out, err),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Stats(a) => cmd_stats(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn io_out(r: std::io::Result<()>) -> Result<()> {
    r.context(|| "writing output".to_string())
}

fn require_file(flag: &str, path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{flag}: `{}` is not a readable file", path.display())))
    }
}

fn cmd_gen_corpus(a: GenArgs, out: &mut dyn Write) -> CliResult {
    let mut spec = match &a.config {
        Some(p) => {
            require_file("--config", p)?;
            let text = fs::read_to_string(p).context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { spec.$f = v; } )* };
    }
    set!(num_codes, vocab_size, doc_len, placement, codes_per_note, phrases_per_code, phrase_len, train, val, test, seed);
    let corpus = generate_synthetic(&spec)?;
    corpus.write(&a.out)?;
    let dump = toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?;
    let p = a.out.join("synthetic.toml");
    fs::write(&p, dump).context(|| format!("writing {}", p.display()))?;
    io_out(writeln!(
        out,
        "wrote {} train / {} val / {} test notes, {} codes, {} vocab tokens to {}",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len(),
        corpus.labels.len(),
        corpus.vocab.len(),
        a.out.display()
    ))?;
    Ok(())
}

fn to_examples(notes: &[Note], pipeline: &TextPipeline, labels: &LabelSet) -> (Vec<Example>, usize, usize) {
    let (mut unknown, mut skipped) = (0, 0);
    let mut out = Vec::with_capacity(notes.len());
    for n in notes {
        let seq = pipeline.encode(&n.text);
        let (l, u) = labels.encode(&n.codes);
        unknown += u;
        if seq.len == 0 {
            skipped += 1;
            continue;
        }
        out.push(Example { ids: seq.ids, labels: l });
    }
    (out, unknown, skipped)
}

struct CheckpointWriter<'a> {
    template: Classifier,
    dir: PathBuf,
    log: BufWriter<File>,
    out: &'a mut dyn Write,
}

impl CheckpointWriter<'_> {
    fn save(&mut self, name: &str, params: &ParamStore<f32>, threshold: f64) -> Result<()> {
        self.template.model.params = params.clone();
        self.template.threshold = threshold;
        self.template.save(&self.dir.join(name))
    }
}

impl TrainObserver for CheckpointWriter<'_> {
    fn on_eval(&mut self, row: &LogRow, params: &ParamStore<f32>, is_best: bool) -> Result<()> {
        writeln!(self.log, "{}", row.to_csv())
            .and_then(|_| self.log.flush())
            .context(|| "writing metrics log".to_string())?;
        self.save("latest", params, row.threshold)?;
        if is_best {
            self.save("best", params, row.threshold)?;
        }
        io_out(writeln!(
            self.out,
            "step {} train_loss {:.4} val_micro_f1 {:.4}{}",
            row.step,
            row.train_loss,
            row.val_micro_f1,
            if is_best { " *" } else { "" }
        ))
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let file = match &a.config {
        Some(p) => {
            require_file("--config", p)?;
            RunConfig::from_file(p)?
        }
        None => RunConfig::default(),
    };
    let merged = file.overlaid(&a.run);
    let Some(corpus_path) = merged.corpus.clone() else {
        return Err(CliError::Usage("missing required --corpus <PATH>".into()));
    };
    require_file("--corpus", &corpus_path)?;
    for (flag, p) in [("--val", &merged.val), ("--vocab", &merged.vocab), ("--codes", &merged.codes)] {
        if let Some(p) = p {
            require_file(flag, p)?;
        }
    }
    let cfg = merged.resolve()?;
    let out_dir = cfg.out.clone().expect("resolved");

    let mut train_notes = load_corpus(&corpus_path)?;
    if train_notes.is_empty() {
        return Err(Error::Empty(format!("training corpus {}", corpus_path.display())).into());
    }
    let val_notes = match &cfg.val {
        Some(p) => load_corpus(p)?,
        None => {
            if train_notes.len() < 2 {
                return Err(Error::Empty("need at least two notes to hold out a validation split".into()).into());
            }
            let n_val = (train_notes.len() / 10).max(1);
            train_notes.split_off(train_notes.len() - n_val)
        }
    };
    let train_ids: std::collections::HashSet<&str> = train_notes.iter().map(|n| n.note_id.as_str()).collect();
    if let Some(dup) = val_notes.iter().find(|n| train_ids.contains(n.note_id.as_str())) {
        return Err(Error::Config(format!("note `{}` is in both training and validation sets", dup.note_id)).into());
    }

    let labels = match &cfg.codes {
        Some(p) => LabelSet::from_file(p)?,
        None => LabelSet::from_notes(&train_notes),
    };
    if labels.is_empty() {
        return Err(Error::Empty("label set (no codes in the training corpus)".into()).into());
    }

    let min_freq = cfg.min_word_freq.unwrap_or(3);
    let vocab = match &cfg.vocab {
        Some(p) => Vocab::from_file(p)?,
        None => Vocab::build_word_vocab(train_notes.iter().map(|n| n.text.as_str()), min_freq),
    };
    let pipeline = match cfg.encoder.unwrap_or_default() {
        EncoderKind::Transformer => {
            let mut t = Tokenizer::new(vocab);
            t.wrap_special = cfg.wrap_special.unwrap_or(false);
            TextPipeline::WordPiece(t)
        }
        EncoderKind::Cnn => TextPipeline::Words(vocab),
    };

    let model_config = cfg.model_config(labels.len(), pipeline.vocab().len())?;
    let train_cfg = cfg.train_config();
    let mut model = Model::new(model_config, train_cfg.seed)?;

    let (train, unknown_train, skipped_train) = to_examples(&train_notes, &pipeline, &labels);
    let (val, unknown_val, skipped_val) = to_examples(&val_notes, &pipeline, &labels);
    for (what, n) in [
        ("unknown codes in training notes", unknown_train),
        ("unknown codes in validation notes", unknown_val),
        ("empty training notes skipped", skipped_train),
        ("empty validation notes skipped", skipped_val),
    ] {
        if n > 0 {
            let _ = writeln!(err, "warning: {n} {what}");
        }
    }

    fs::create_dir_all(&out_dir).context(|| format!("creating {}", out_dir.display()))?;
    let dump_path = out_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&dump_path, cfg.to_toml()).context(|| format!("writing {}", dump_path.display()))?;
    let log_path = cfg.metrics_log.clone().expect("resolved");
    if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).context(|| format!("creating {}", parent.display()))?;
    }
    let mut log = BufWriter::new(File::create(&log_path).context(|| format!("creating {}", log_path.display()))?);
    writeln!(log, "{LOG_HEADER}").context(|| "writing metrics log".to_string())?;

    let initial = model.params.clone();
    let mut writer = CheckpointWriter {
        template: Classifier {
            model: model.clone(),
            pipeline,
            labels,
            threshold: 0.5,
        },
        dir: out_dir.clone(),
        log,
        out,
    };
    let outcome = train_loop(&mut model, &train, &val, &train_cfg, &mut writer)?;
    if outcome.log.is_empty() {
        writer.save("best", &initial, 0.5)?;
        writer.save("latest", &initial, 0.5)?;
    }
    let out = writer.out;
    io_out(writeln!(
        out,
        "best step {} val_micro_f1 {:.4} threshold {:.2} -> {}",
        outcome.best.step,
        outcome.best.f1.max(0.0),
        outcome.best.threshold,
        out_dir.join("best").display()
    ))?;
    Ok(())
}

fn predictions(clf: &Classifier, notes: &[Note]) -> Result<(PredictionSet, usize)> {
    let mut preds = PredictionSet::new(clf.labels.len());
    let mut unknown = 0;
    for n in notes {
        let (labels, u) = clf.labels.encode(&n.codes);
        unknown += u;
        let probs = clf
            .probabilities(&n.text)
            .map_err(|e| Error::Config(format!("note `{}`: {e}", n.note_id)))?;
        preds.push_note(&probs, &labels)?;
    }
    Ok((preds, unknown))
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    require_file("--corpus", &a.corpus)?;
    if let Some(t) = a.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Usage(format!("--threshold must be in [0, 1], got {t}")));
        }
    }
    let clf = Classifier::load(&a.checkpoint)?;
    if let Some(p) = &a.codes {
        require_file("--codes", p)?;
        let codes = LabelSet::from_file(p)?;
        if codes.len() != clf.labels.len() {
            return Err(Error::LabelMismatch {
                checkpoint: clf.labels.len(),
                corpus: codes.len(),
            }
            .into());
        }
    }
    let notes = load_corpus(&a.corpus)?;
    if notes.is_empty() {
        return Err(Error::Empty(format!("evaluation corpus {}", a.corpus.display())).into());
    }
    let threshold = match (a.threshold, &a.val) {
        (Some(t), _) => t,
        (None, Some(v)) => {
            require_file("--val", v)?;
            let val = load_corpus(v)?;
            if val.is_empty() {
                return Err(Error::Empty(format!("validation corpus {}", v.display())).into());
            }
            best_threshold(&predictions(&clf, &val)?.0, &default_grid())?.0
        }
        (None, None) => clf.threshold,
    };
    let (preds, unknown) = predictions(&clf, &notes)?;
    if unknown > 0 {
        let _ = writeln!(err, "warning: {unknown} codes not in the checkpoint label set were ignored");
    }
    let report = evaluate(&preds, threshold);
    io_out(write!(out, "{}\n{}", report.to_key_values(), report.to_table()))?;
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> CliResult {
    let text = match (&a.text, &a.text_file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => {
            require_file("--text-file", p)?;
            fs::read_to_string(p).context(|| format!("reading {}", p.display()))?
        }
        (None, None) => return Err(CliError::Usage("one of --text or --text-file is required".into())),
    };
    let clf = Classifier::load(&a.checkpoint)?;
    if text.trim().is_empty() {
        return Err(Error::Empty("note text".into()).into());
    }
    let mut body = String::new();
    for (code, p) in clf.rank(&text, a.top_n)? {
        body.push_str(&format!("{code}\t{p:.6}\n"));
    }
    io_out(out.write_all(body.as_bytes()))?;
    Ok(())
}

fn cmd_stats(a: StatsArgs, out: &mut dyn Write) -> CliResult {
    require_file("--corpus", &a.corpus)?;
    let notes = load_corpus(&a.corpus)?;
    let lengths: Vec<usize> = if let Some(v) = &a.vocab {
        require_file("--vocab", v)?;
        let tok = Tokenizer::new(Vocab::from_file(v)?);
        notes.iter().map(|n| tok.tokenize(&n.text).len).collect()
    } else if let Some(dir) = &a.checkpoint {
        let clf = Classifier::load(dir)?;
        notes.iter().map(|n| clf.pipeline.encode(&n.text).len).collect()
    } else {
        notes.iter().map(|n| basic_split(&n.text).len()).collect()
    };
    let cdf = length_cdf(&lengths)?;
    io_out(out.write_all(format_cdf(&cdf).as_bytes()))?;
    Ok(())
}
