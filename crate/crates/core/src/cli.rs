//! Command-line pipeline: `ingest → vectorize → fit → summarize → render`,
//! plus `synth` fixtures and the `bench` acceptance table.
//!
//! Settings come from defaults, then an optional `--config` file of
//! `key = value` lines, then flags. Every command prints a JSON manifest to
//! stdout; usage problems exit with 2, pipeline failures with 1.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{parse_documents, slice_by_day, Corpus};
use crate::error::{Error, Result};
use crate::io::{self, TensorFile};
use crate::ncpd::{self, CpFactors, PrevalenceNorm};
use crate::nmf;
use crate::online_ncpd::{self, month_stream_seed, OncpdParams, StreamPlan, TensorStream};
use crate::online_nmf::{self, DecayPer, MinibatchPlan, OnmfParams, SliceSource};
use crate::synth::{gen_planted, PulseDesign};
use crate::tensor_core::{Mat, SolverConfig};
use crate::topics::{self, PrevalenceMatrix, TopicSummary};
use crate::vectorizer::{self, Vocabulary};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "DYNTOPIC_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nmf,
    Onmf,
    Ncpd,
    Oncpd,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Nmf => "nmf",
            ModelKind::Onmf => "onmf",
            ModelKind::Ncpd => "ncpd",
            ModelKind::Oncpd => "oncpd",
        }
    }

    fn is_matrix(self) -> bool {
        matches!(self, ModelKind::Nmf | ModelKind::Onmf)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::from_str_value(s)
    }
}

impl ModelKind {
    fn from_str_value(s: &str) -> Result<Self> {
        <ModelKind as ValueEnum>::from_str(s, true)
            .map_err(|_| Error::invalid(format!("model must be nmf, onmf, ncpd or oncpd, got {s}")))
    }
}

fn parse_norm(s: &str) -> Result<PrevalenceNorm> {
    match s {
        "per-day" | "day" => Ok(PrevalenceNorm::PerDay),
        "per-topic" | "topic" => Ok(PrevalenceNorm::PerTopic),
        other => Err(Error::invalid(format!("prevalence_norm must be per-day or per-topic, got {other}"))),
    }
}

/// Every setting of a run; echoed in the manifest so runs can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub tensor: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub days: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub strict: bool,
    pub top_k: usize,
    /// Tensor document slots; the top-k count unless set.
    pub docs_per_day: Option<usize>,
    pub vocab_cap: usize,
    pub model: ModelKind,
    pub rank: usize,
    pub beta: f64,
    pub lambda: f64,
    pub minibatch_size: usize,
    pub inner_iterations: usize,
    pub stream_count: usize,
    pub stream_width: usize,
    pub seed: u64,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub decay_per: DecayPer,
    /// Exclusive day counts closing each segment (month ends).
    pub checkpoints: Vec<usize>,
    pub keywords: usize,
    pub prevalence_norm: PrevalenceNorm,
    pub n_days: usize,
    pub n_terms: usize,
    pub persistent: usize,
    pub pulse_start: usize,
    pub pulse_len: usize,
    pub support: usize,
    pub pulse_height: f64,
    pub intensity: f64,
    pub noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = PulseDesign::default();
        Self {
            input: None,
            corpus: None,
            tensor: None,
            matrix: None,
            vocab: None,
            days: None,
            model_dir: None,
            out: PathBuf::from("out"),
            start: None,
            end: None,
            strict: false,
            top_k: 1000,
            docs_per_day: None,
            vocab_cap: vectorizer::DEFAULT_VOCAB_CAP,
            model: ModelKind::Nmf,
            rank: 20,
            beta: 0.7,
            lambda: 1.0,
            minibatch_size: 50,
            inner_iterations: 100,
            stream_count: 50,
            stream_width: 100,
            seed: 0,
            max_iterations: None,
            tolerance: None,
            decay_per: DecayPer::Step,
            checkpoints: Vec::new(),
            keywords: topics::DEFAULT_KEYWORDS,
            prevalence_norm: PrevalenceNorm::PerDay,
            n_days: synth.n_days,
            n_terms: synth.n_terms,
            persistent: synth.persistent,
            pulse_start: synth.pulse_start,
            pulse_len: synth.pulse_len,
            support: synth.support,
            pulse_height: synth.pulse_height,
            intensity: synth.intensity,
            noise: synth.noise,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::invalid(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_date_value(key: &str, value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|e| Error::invalid(format!("{key}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Sets one field from its textual form; keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        let v = value.trim();
        match k {
            "input" => self.input = Some(v.into()),
            "corpus" => self.corpus = Some(v.into()),
            "tensor" => self.tensor = Some(v.into()),
            "matrix" => self.matrix = Some(v.into()),
            "vocab" => self.vocab = Some(v.into()),
            "days" => self.days = Some(v.into()),
            "model_dir" => self.model_dir = Some(v.into()),
            "out" => self.out = v.into(),
            "start" => self.start = Some(parse_date_value(k, v)?),
            "end" => self.end = Some(parse_date_value(k, v)?),
            "strict" => self.strict = parse(k, v)?,
            "top_k" => self.top_k = parse(k, v)?,
            "docs_per_day" => self.docs_per_day = Some(parse(k, v)?),
            "vocab_cap" => self.vocab_cap = parse(k, v)?,
            "model" => self.model = ModelKind::from_str_value(v)?,
            "rank" => self.rank = parse(k, v)?,
            "beta" => self.beta = parse(k, v)?,
            "lambda" => self.lambda = parse(k, v)?,
            "minibatch_size" => self.minibatch_size = parse(k, v)?,
            "inner_iterations" => self.inner_iterations = parse(k, v)?,
            "stream_count" => self.stream_count = parse(k, v)?,
            "stream_width" => self.stream_width = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            "max_iterations" => self.max_iterations = Some(parse(k, v)?),
            "tolerance" => self.tolerance = Some(parse(k, v)?),
            "decay_per" => self.decay_per = v.parse()?,
            "checkpoints" => self.checkpoints = parse_list(k, v)?,
            "keywords" => self.keywords = parse(k, v)?,
            "prevalence_norm" => self.prevalence_norm = parse_norm(v)?,
            "n_days" => self.n_days = parse(k, v)?,
            "n_terms" => self.n_terms = parse(k, v)?,
            "persistent" => self.persistent = parse(k, v)?,
            "pulse_start" => self.pulse_start = parse(k, v)?,
            "pulse_len" => self.pulse_len = parse(k, v)?,
            "support" => self.support = parse(k, v)?,
            "pulse_height" => self.pulse_height = parse(k, v)?,
            "intensity" => self.intensity = parse(k, v)?,
            "noise" => self.noise = parse(k, v)?,
            other => return Err(Error::invalid(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; blank lines and `#` comments are skipped.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected key = value".into(),
            })?;
            self.set(key, value).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("top_k", self.top_k),
            ("vocab_cap", self.vocab_cap),
            ("rank", self.rank),
            ("minibatch_size", self.minibatch_size),
            ("inner_iterations", self.inner_iterations),
            ("stream_count", self.stream_count),
            ("stream_width", self.stream_width),
            ("keywords", self.keywords),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be ≥ 1")));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be ≥ 0"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be ≥ 0"));
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s > e {
                return Err(Error::InvertedSpan { start: s, end: e });
            }
        }
        Ok(())
    }

    fn solver_config(&self, model: ModelKind) -> SolverConfig {
        let base = match model {
            ModelKind::Ncpd | ModelKind::Oncpd => ncpd::default_config(),
            _ => SolverConfig::default(),
        };
        SolverConfig {
            max_iterations: self.max_iterations.unwrap_or(base.max_iterations),
            tolerance: self.tolerance.unwrap_or(base.tolerance),
            ..base
        }
        .with_seed(self.seed)
    }

    fn pulse_design(&self) -> PulseDesign {
        PulseDesign {
            n_days: self.n_days,
            n_terms: self.n_terms,
            docs_per_day: self.docs_per_day.unwrap_or(PulseDesign::default().docs_per_day),
            persistent: self.persistent,
            pulse_start: self.pulse_start,
            pulse_len: self.pulse_len,
            support: self.support,
            pulse_height: self.pulse_height,
            intensity: self.intensity,
            noise: self.noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dyntopic", version, about = "Dynamic topic modeling with NMF and nonnegative CP decompositions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse JSON-Lines documents, slice by day, keep the top-k per day.
    Ingest(Flags),
    /// Build the vocabulary and the day × term × document TF-IDF tensor.
    Vectorize(Flags),
    /// Fit nmf, onmf, ncpd or oncpd.
    Fit(Flags),
    /// Keyword tables, topic labels and prevalence for a fitted model.
    Summarize(Flags),
    /// Heatmap CSV and SVG from a summary.
    Render(Flags),
    /// Planted-topic tensor with a short pulse topic.
    Synth(Flags),
    /// Run the acceptance criteria and print a pass/fail table.
    Bench(BenchFlags),
}

#[derive(Debug, Args)]
struct BenchFlags {
    /// Only these criteria (repeatable).
    #[arg(long = "criterion", value_name = "N")]
    criteria: Vec<u8>,
}

#[derive(Debug, Default, Args)]
struct Flags {
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    tensor: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    days: Option<PathBuf>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d"))]
    start: Option<NaiveDate>,
    #[arg(long, value_parser = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d"))]
    end: Option<NaiveDate>,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    docs_per_day: Option<usize>,
    #[arg(long)]
    vocab_cap: Option<usize>,
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    minibatch_size: Option<usize>,
    #[arg(long)]
    inner_iterations: Option<usize>,
    #[arg(long)]
    stream_count: Option<usize>,
    #[arg(long)]
    stream_width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, value_parser = |s: &str| s.parse::<DecayPer>().map_err(|e| e.to_string()))]
    decay_per: Option<DecayPer>,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    #[arg(long)]
    keywords: Option<usize>,
    #[arg(long, value_parser = |s: &str| parse_norm(s).map_err(|e| e.to_string()))]
    prevalence_norm: Option<PrevalenceNorm>,
    #[arg(long)]
    n_days: Option<usize>,
    #[arg(long)]
    n_terms: Option<usize>,
    #[arg(long)]
    persistent: Option<usize>,
    #[arg(long)]
    pulse_start: Option<usize>,
    #[arg(long)]
    pulse_len: Option<usize>,
    #[arg(long)]
    support: Option<usize>,
    #[arg(long)]
    pulse_height: Option<f64>,
    #[arg(long)]
    intensity: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file_text(&io::read_text(path)?)?;
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        macro_rules! take_opt {
            ($($field:ident),*) => {
                $(if self.$field.is_some() { cfg.$field = self.$field.clone(); })*
            };
        }
        take_opt!(input, corpus, tensor, matrix, vocab, days, model_dir, start, end, docs_per_day, max_iterations, tolerance);
        take!(out, top_k, vocab_cap, model, rank, beta, lambda, minibatch_size, inner_iterations, stream_count, stream_width, seed);
        take!(decay_per, checkpoints, keywords, prevalence_norm, n_days, n_terms, persistent, pulse_start, pulse_len, support);
        take!(pulse_height, intensity, noise);
        cfg.strict |= self.strict;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Pipeline(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Pipeline(e)
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> std::result::Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Usage(format!("missing --{flag} (or `{}` in the config file)", flag.replace('-', "_"))))
}

/// Sets the worker pool size from `DYNTOPIC_THREADS` when present.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}

/// Runs one command line; returns the process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                2
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    let started = Instant::now();
    let outcome = match &cli.command {
        Command::Bench(flags) => bench(flags, stderr),
        Command::Ingest(f) => with_config(f, ingest),
        Command::Vectorize(f) => with_config(f, vectorize),
        Command::Fit(f) => with_config(f, fit),
        Command::Summarize(f) => with_config(f, summarize),
        Command::Render(f) => with_config(f, render),
        Command::Synth(f) => with_config(f, synth),
    };
    match outcome {
        Ok((mut manifest, code)) => {
            manifest["timings"] = json!({ "seconds": started.elapsed().as_secs_f64() });
            let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
            let _ = writeln!(stdout, "{text}");
            code
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Pipeline(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

type Outcome = std::result::Result<(Value, i32), Failure>;

fn with_config(flags: &Flags, stage: fn(&RunConfig) -> std::result::Result<Value, Failure>) -> Outcome {
    let cfg = flags.resolve().map_err(|e| match e {
        Error::Io { .. } => Failure::Pipeline(e),
        other => Failure::Usage(other.to_string()),
    })?;
    let mut manifest = stage(&cfg)?;
    manifest["config"] = serde_json::to_value(&cfg).map_err(Error::from)?;
    Ok((manifest, 0))
}

fn bench(flags: &BenchFlags, stderr: &mut dyn Write) -> Outcome {
    let ids: Vec<u8> = if flags.criteria.is_empty() {
        crate::bench::CRITERIA.iter().map(|c| c.0).collect()
    } else {
        flags.criteria.clone()
    };
    let mut reports = Vec::new();
    for id in ids {
        let report = crate::bench::run_criterion(id).map_err(|e| Failure::Usage(e.to_string()))?;
        let _ = writeln!(stderr, "{report}");
        reports.push(report);
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    let manifest = json!({
        "command": "bench",
        "passed": passed,
        "total": reports.len(),
        "criteria": reports,
    });
    Ok((manifest, if passed == reports.len() { 0 } else { 1 }))
}

fn document_json(doc: &crate::corpus::Document) -> Value {
    json!({
        "id": doc.id,
        "date": doc.date.format("%Y-%m-%d").to_string(),
        "text": doc.text,
        "retweets": doc.engagement,
    })
}

fn load_corpus(path: &Path, cfg: &RunConfig) -> Result<(Corpus, Value)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let report = parse_documents(BufReader::new(file), cfg.strict)?;
    for err in &report.errors {
        log::warn!("{}:{}: {}", path.display(), err.line, err.message);
    }
    let docs = report.documents;
    let start = cfg.start.or_else(|| docs.iter().map(|d| d.date).min());
    let end = cfg.end.or_else(|| docs.iter().map(|d| d.date).max());
    let (Some(start), Some(end)) = (start, end) else {
        return Err(Error::invalid(format!("{} holds no usable documents", path.display())));
    };
    let read = docs.len();
    let (corpus, dropped) = slice_by_day(docs, start, end)?;
    let stats = json!({
        "documents_read": read,
        "line_errors": report.errors.len(),
        "dropped_outside_span": dropped,
        "span": [start.format("%Y-%m-%d").to_string(), end.format("%Y-%m-%d").to_string()],
        "days": corpus.num_days(),
    });
    Ok((corpus, stats))
}

fn ingest(cfg: &RunConfig) -> std::result::Result<Value, Failure> {
    let input = require(&cfg.input, "input")?;
    let (corpus, stats) = load_corpus(input, cfg)?;
    let corpus = corpus.top_k(cfg.top_k)?;
    let mut text = String::new();
    for doc in corpus.documents() {
        text.push_str(&document_json(doc).to_string());
        text.push('\n');
    }
    let corpus_path = cfg.out.join("corpus.jsonl");
    let days_path = cfg.out.join("days.txt");
    io::write_text(&corpus_path, &text)?;
    io::write_dates(&days_path, &corpus.dates())?;
    let per_day: Vec<usize> = corpus.slices().iter().map(|s| s.len()).collect();
    Ok(json!({
        "command": "ingest",
        "stats": stats,
        "documents_kept": corpus.num_documents(),
        "documents_per_day": per_day,
        "outputs": [corpus_path, days_path],
    }))
}

fn vectorize(cfg: &RunConfig) -> std::result::Result<Value, Failure> {
    let path = require(&cfg.corpus, "corpus")?;
    let (corpus, stats) = load_corpus(path, cfg)?;
    let vocab = vectorizer::build_vocab(&corpus, cfg.vocab_cap)?;
    let slots = cfg.docs_per_day.unwrap_or(cfg.top_k);
    let tensor = vectorizer::build_tensor(&corpus, &vocab, slots)?;
    let vocab_path = cfg.out.join("vocab.tsv");
    let tensor_path = cfg.out.join("tensor.bin");
    let days_path = cfg.out.join("days.txt");
    io::write_vocab(&vocab_path, &vocab)?;
    io::write_tensor_bin(&tensor_path, tensor.values())?;
    io::write_dates(&days_path, &corpus.dates())?;
    Ok(json!({
        "command": "vectorize",
        "stats": stats,
        "vocabulary_size": vocab.len(),
        "tensor_dims": tensor.dims(),
        "outputs": [vocab_path, tensor_path, days_path],
    }))
}

fn write_meta(dir: &Path, meta: &Value) -> Result<PathBuf> {
    let path = dir.join("meta.json");
    io::write_json(&path, meta)?;
    Ok(path)
}

/// Per-day code blocks side by side.
fn hstack(blocks: &[Mat], rows: usize) -> Result<Mat> {
    if blocks.is_empty() {
        return Ok(Array2::zeros((rows, 0)));
    }
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))
}

fn fit(cfg: &RunConfig) -> std::result::Result<Value, Failure> {
    let out = &cfg.out;
    let model = cfg.model;
    let solver = cfg.solver_config(model);
    let mut meta = json!({
        "model": model.name(),
        "rank": cfg.rank,
        "seed": cfg.seed,
    });
    let mut outputs: Vec<PathBuf> = Vec::new();
    match model {
        ModelKind::Nmf => {
            let x = match (&cfg.matrix, &cfg.tensor) {
                (Some(m), _) => io::read_matrix_csv(m)?,
                (None, Some(t)) => io::read_term_tensor(t)?.concatenated(),
                (None, None) => return Err(Failure::Usage("nmf needs --matrix or --tensor".into())),
            };
            let fitted = nmf::fit_nmf(x.view(), cfg.rank, &solver)?;
            io::write_matrix_csv(&out.join("W.csv"), &fitted.w)?;
            io::write_matrix_csv(&out.join("H.csv"), &fitted.h)?;
            outputs.extend([out.join("W.csv"), out.join("H.csv")]);
            meta["iterations"] = json!(fitted.iterations());
            meta["final_objective"] = json!(fitted.final_objective());
            meta["max_iterations"] = json!(solver.max_iterations);
            meta["tolerance"] = json!(solver.tolerance);
        }
        ModelKind::Onmf => {
            let source = TensorFile::open(require(&cfg.tensor, "tensor")?)?;
            let params = OnmfParams {
                rank: cfg.rank,
                beta: cfg.beta,
                plan: MinibatchPlan {
                    batch_size: cfg.minibatch_size,
                    inner_iterations: cfg.inner_iterations,
                    seed: cfg.seed,
                },
                decay_per: cfg.decay_per,
            };
            let snapshots = online_nmf::sequential_onmf(&source, &params, &cfg.checkpoints)?;
            if snapshots.len() > 1 {
                for (s, snap) in snapshots.iter().enumerate() {
                    let dir = out.join("snapshots").join(format!("{s:02}"));
                    io::write_matrix_csv(&dir.join("W.csv"), &snap.w)?;
                    io::write_matrix_csv(&dir.join("H.csv"), &hstack(&snap.codes, cfg.rank)?)?;
                    write_meta(&dir, &json!({ "days": [snap.days.0, snap.days.1], "steps": snap.steps }))?;
                    outputs.push(dir);
                }
            }
            let last = snapshots.last().expect("at least one snapshot");
            let mut objective = 0.0;
            for (t, h) in (last.days.0..last.days.1).zip(&last.codes) {
                let x = source.load(t)?;
                objective += nmf::objective(x.view(), last.w.view(), h.view());
            }
            io::write_matrix_csv(&out.join("W.csv"), &last.w)?;
            io::write_matrix_csv(&out.join("H.csv"), &hstack(&last.codes, cfg.rank)?)?;
            outputs.extend([out.join("W.csv"), out.join("H.csv")]);
            meta["steps"] = json!(last.steps);
            meta["final_objective"] = json!(objective);
            meta["objective_days"] = json!([last.days.0, last.days.1]);
            meta["documents_per_day"] = json!(last.codes.iter().map(|h| h.ncols()).collect::<Vec<_>>());
            meta["beta"] = json!(cfg.beta);
            meta["minibatch_size"] = json!(cfg.minibatch_size);
            meta["inner_iterations"] = json!(cfg.inner_iterations);
            meta["decay_per"] = json!(cfg.decay_per);
            meta["checkpoints"] = json!(cfg.checkpoints);
        }
        ModelKind::Ncpd => {
            let x = io::read_tensor_bin(require(&cfg.tensor, "tensor")?)?;
            let fitted = ncpd::fit_ncpd(x.view(), cfg.rank, &solver)?;
            io::write_cp_factors(out, &fitted.factors)?;
            outputs.extend(["A.csv", "B.csv", "C.csv"].map(|f| out.join(f)));
            meta["iterations"] = json!(fitted.iterations());
            meta["final_objective"] = json!(fitted.final_objective());
            meta["max_iterations"] = json!(solver.max_iterations);
            meta["tolerance"] = json!(solver.tolerance);
        }
        ModelKind::Oncpd => {
            let source = TensorFile::open(require(&cfg.tensor, "tensor")?)?;
            let params = OncpdParams {
                rank: cfg.rank,
                beta: cfg.beta,
                lambda: cfg.lambda,
                seed: cfg.seed,
            };
            let plan = StreamPlan {
                count: cfg.stream_count,
                width: cfg.stream_width,
            };
            let factors: CpFactors = if cfg.checkpoints.is_empty() {
                let stream = TensorStream::subsample(&source, plan.width, plan.count, month_stream_seed(cfg.seed, 0))?;
                let fitted = online_ncpd::try_fit_oncpd(stream, &params)?;
                meta["final_objective"] = json!(fitted.coding_trace.last());
                fitted.state.factors
            } else {
                let months = online_ncpd::sequential_oncpd(&source, &cfg.checkpoints, &params, &plan)?;
                for (s, f) in months.iter().enumerate() {
                    let dir = out.join("snapshots").join(format!("{s:02}"));
                    io::write_cp_factors(&dir, f)?;
                    outputs.push(dir);
                }
                months.into_iter().last().expect("at least one month")
            };
            io::write_cp_factors(out, &factors)?;
            outputs.extend(["A.csv", "B.csv", "C.csv"].map(|f| out.join(f)));
            meta["beta"] = json!(cfg.beta);
            meta["lambda"] = json!(cfg.lambda);
            meta["stream_count"] = json!(cfg.stream_count);
            meta["stream_width"] = json!(cfg.stream_width);
            meta["checkpoints"] = json!(cfg.checkpoints);
        }
    }
    outputs.push(write_meta(out, &meta)?);
    Ok(json!({
        "command": "fit",
        "model": model.name(),
        "final_objective": meta.get("final_objective"),
        "meta": meta,
        "outputs": outputs,
    }))
}

#[derive(Debug, Deserialize)]
struct ModelMeta {
    model: ModelKind,
    #[serde(default)]
    objective_days: Option<(usize, usize)>,
}

fn summarize(cfg: &RunConfig) -> std::result::Result<Value, Failure> {
    let dir = require(&cfg.model_dir, "model-dir")?;
    let vocab: Vocabulary = io::read_vocab(require(&cfg.vocab, "vocab")?)?;
    let meta: ModelMeta = io::read_json(&dir.join("meta.json"))?;
    let (topic_terms, prevalence) = if meta.model.is_matrix() {
        let w = io::read_matrix_csv(&dir.join("W.csv"))?;
        let source = TensorFile::open(require(&cfg.tensor, "tensor")?)?;
        let (start, end) = meta.objective_days.unwrap_or((0, source.num_slices()));
        let inner = SolverConfig::new(200, 1e-9);
        let mut codes = Vec::with_capacity(end - start);
        for t in start..end {
            let x = source.load(t)?;
            codes.push(nmf::code(x.view(), w.view(), &inner)?);
        }
        (w, topics::daily_prevalence(&codes)?)
    } else {
        let f = io::read_cp_factors(dir)?;
        let p = ncpd::temporal_prevalence(&f, cfg.prevalence_norm);
        (f.b.clone(), PrevalenceMatrix { values: p })
    };
    let summaries = topics::summarize_topics(&vocab, topic_terms.view(), cfg.keywords)?;
    let out = &cfg.out;
    let keywords = out.join("keywords.tsv");
    io::write_text(&keywords, &topics::keywords_tsv(&summaries))?;
    let topics_path = out.join("topics.json");
    io::write_json(&topics_path, &summaries)?;
    let prevalence_path = out.join("prevalence.csv");
    io::write_matrix_csv(&prevalence_path, &prevalence.values)?;
    let labels: Vec<&str> = summaries.iter().map(|s| s.label.as_str()).collect();
    Ok(json!({
        "command": "summarize",
        "model": meta.model.name(),
        "labels": labels,
        "outputs": [keywords, topics_path, prevalence_path],
    }))
}

fn render(cfg: &RunConfig) -> std::result::Result<Value, Failure> {
    let dir = require(&cfg.model_dir, "model-dir")?;
    let summaries: Vec<TopicSummary> = io::read_json(&dir.join("topics.json"))?;
    let values = io::read_matrix_csv(&dir.join("prevalence.csv"))?;
    let dates = io::read_dates(require(&cfg.days, "days")?)?;
    let p = PrevalenceMatrix { values };
    let (csv, svg) = topics::export_heatmap(&p, &summaries, &dates, &cfg.out)?;
    Ok(json!({
        "command": "render",
        "topics": p.num_topics(),
        "days": p.num_days(),
        "outputs": [csv, svg],
    }))
}

fn synth(cfg: &RunConfig) -> std::result::Result<Value, Failure> {
    let design = cfg.pulse_design();
    let spec = design.spec()?;
    let x = gen_planted(&spec)?;
    let out = &cfg.out;
    let tensor = out.join("tensor.bin");
    io::write_tensor_bin(&tensor, x.values())?;
    let profiles = out.join("profiles.csv");
    io::write_matrix_csv(&profiles, &spec.profiles())?;
    let width = (spec.n_terms.max(2) - 1).to_string().len();
    let docs = spec.n_days * spec.docs_per_day;
    let entries: Vec<(String, usize)> = (0..spec.n_terms)
        .map(|i| {
            let df = x.values().index_axis(Axis(1), i).iter().filter(|&&v| v > 0.0).count();
            (format!("w{i:0width$}"), df.max(1))
        })
        .collect();
    let vocab = Vocabulary::from_parts(entries, docs)?;
    let vocab_path = out.join("vocab.tsv");
    io::write_vocab(&vocab_path, &vocab)?;
    let first = NaiveDate::from_ymd_opt(2020, 2, 1).expect("valid date");
    let dates: Vec<NaiveDate> = first.iter_days().take(spec.n_days).collect();
    let days = out.join("days.txt");
    io::write_dates(&days, &dates)?;
    Ok(json!({
        "command": "synth",
        "design": design,
        "pulse_topic": design.pulse_index(),
        "tensor_dims": x.dims(),
        "outputs": [tensor, profiles, vocab_path, days],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn defaults_follow_reported_settings() {
        let cfg = RunConfig::default();
        assert_eq!((cfg.rank, cfg.beta, cfg.lambda), (20, 0.7, 1.0));
        assert_eq!((cfg.minibatch_size, cfg.inner_iterations), (50, 100));
        assert_eq!((cfg.top_k, cfg.vocab_cap), (1000, 5000));
        assert_eq!((cfg.stream_count, cfg.stream_width), (50, 100));
    }

    #[test]
    fn config_text_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# experiment\nrank = 7\nbeta=0.5 # inline\nmodel = oncpd\ncheckpoints = 29, 60\n").unwrap();
        let flags = Flags {
            config: Some(path),
            rank: Some(9),
            ..Flags::default()
        };
        let cfg = flags.resolve().unwrap();
        assert_eq!(cfg.rank, 9);
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.model, ModelKind::Oncpd);
        assert_eq!(cfg.checkpoints, [29, 60]);
    }

    #[test]
    fn bad_config_lines_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_file_text("colour = blue").is_err());
        assert!(cfg.apply_file_text("rank").is_err());
        assert!(cfg.apply_file_text("rank = many").is_err());
        assert!(cfg.apply_file_text("start = 2020-13-01").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        let (code, _, err) = run_capture(&["dyntopic", "fit", "--rank", "abc"]);
        assert_eq!(code, 2, "{err}");
        let (code, _, _) = run_capture(&["dyntopic", "frobnicate"]);
        assert_eq!(code, 2);
        let (code, _, err) = run_capture(&["dyntopic", "fit", "--model", "ncpd"]);
        assert_eq!(code, 2);
        assert!(err.contains("--tensor"), "{err}");
    }

    #[test]
    fn pipeline_errors_exit_one() {
        let (code, _, err) = run_capture(&["dyntopic", "fit", "--model", "ncpd", "--tensor", "/nonexistent/x.bin"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error:"), "{err}");
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_capture(&["dyntopic", "--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("vectorize"));
    }
}
