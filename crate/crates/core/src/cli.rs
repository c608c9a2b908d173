//! Command-line front end.
//!
//! Exit codes: 0 success or help, 1 usage or config error, 2 I/O or format
//! error, 3 numerical failure. Every output file is staged next to its
//! destination and only renamed into place once the whole command succeeded.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tempfile::NamedTempFile;

use crate::analysis::{average_target_similarities, threshold_sweep, write_sweep_csv, Histogram};
use crate::analysis::{evaluate, fraction_above};
use crate::config::Settings;
use crate::contrastive::train_distill;
use crate::corpus::{read_tsv, write_tsv, SentencePair};
use crate::embedding::{read_embeddings, write_embeddings, EmbeddingMatrix};
use crate::encoder::{splitmix64, EncoderParams, FeaturizerConfig};
use crate::error::Error;
use crate::filter::{score_corpus, select_by_token_budget, to_pairs, write_scored_tsv, BudgetSpec};
use crate::margin::{align, report_line};
use crate::synth::{gen_cipher_corpus, inject_noise, CipherSpec};

#[derive(Debug, Parser)]
#[command(name = "codistill", version, about = "Contrastive encoder distillation, xsim search and corpus filtering")]
struct Cli {
    /// Seed for every random choice in this invocation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key=value` settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random linear encoder (a teacher unless --trainable).
    InitEncoder(InitArgs),
    /// Encode one side of a corpus into an EMB1 file.
    Embed(EmbedArgs),
    /// Distill a student from a frozen teacher.
    Train(TrainArgs),
    /// xsim error rate of two aligned EMB1 files.
    XsimEval(XsimArgs),
    /// Score a corpus and select token-budgeted subsets.
    Filter(FilterArgs),
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    #[command(subcommand)]
    GenSynth(SynthCommand),
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Histogram of average target similarity against the queue.
    Histogram(HistogramArgs),
    /// Held-out error and kept fraction over a grid of thresholds.
    Sweep(SweepArgs),
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Cipher-language parallel corpus, optionally with a held-out split.
    Cipher(CipherArgs),
    /// Misalign a fraction of a corpus and write the labels.
    Noise(NoiseArgs),
}

#[derive(Debug, Args, Default)]
struct TrainFlags {
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    queue_size: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    step_size: Option<String>,
    /// queue or in-batch
    #[arg(long)]
    negatives: Option<String>,
    /// on or off
    #[arg(long)]
    shuffle: Option<String>,
    /// on or off
    #[arg(long)]
    prefilter: Option<String>,
}

#[derive(Debug, Args, Default)]
struct SearchFlags {
    /// Neighbourhood size.
    #[arg(long)]
    k: Option<String>,
    /// absolute, distance or ratio
    #[arg(long)]
    margin: Option<String>,
}

impl TrainFlags {
    fn push(&self, out: &mut Vec<(String, String)>) {
        let all = [
            ("tau", &self.tau),
            ("sigma", &self.sigma),
            ("queue_size", &self.queue_size),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("step_size", &self.step_size),
            ("negatives", &self.negatives),
            ("shuffle", &self.shuffle),
            ("prefilter", &self.prefilter),
        ];
        out.extend(all.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))));
    }
}

impl SearchFlags {
    fn push(&self, out: &mut Vec<(String, String)>) {
        let all = [("k", &self.k), ("margin", &self.margin)];
        out.extend(all.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))));
    }
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 4096)]
    buckets: usize,
    /// Comma-separated character n-gram orders.
    #[arg(long, default_value = "2,3", value_delimiter = ',')]
    orders: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    hash_seed: u64,
    /// Weights are drawn from U[-scale, scale].
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Side {
    Source,
    Target,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Tab-separated `source<TAB>target` corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = Side::Source)]
    side: Side,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Epoch log; defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Held-out corpus for a final xsim error rate.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Debug, Args)]
struct XsimArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    student: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    /// All pairs with scores, best first.
    #[arg(long)]
    scored_out: Option<PathBuf>,
    /// Target-token budget; repeatable.
    #[arg(long)]
    budget: Vec<u64>,
    /// Add the 1M, 2M, 3M, 5M and 7M token budgets.
    #[arg(long)]
    presets: bool,
    /// Subsets are written to `<prefix>.<budget>.tsv`.
    #[arg(long)]
    subset_prefix: Option<PathBuf>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Debug, Args)]
struct HistogramArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Reported fraction of targets above this similarity.
    #[arg(long, default_value_t = 0.4)]
    threshold: f64,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "0.5,0.7,0.9,1.5", value_delimiter = ',')]
    sigmas: Vec<f64>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Debug, Args)]
struct CipherArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    size: usize,
    /// Extra pairs from the same language written to --heldout-out.
    #[arg(long, default_value_t = 0)]
    heldout: usize,
    #[arg(long)]
    heldout_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    vocab: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    rate: f64,
    #[arg(long)]
    out: PathBuf,
    /// One `0` or `1` per pair; 1 marks an injected misalignment.
    #[arg(long)]
    labels_out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: format!("{}: {err}", path.display()),
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::InvalidConfig { .. } | Error::KTooLarge { .. } => 1,
        Error::Io(_)
        | Error::Format { .. }
        | Error::BadMagic { .. }
        | Error::TruncatedFile { .. }
        | Error::TrailingData { .. }
        | Error::DimZero
        | Error::DimMismatch { .. }
        | Error::SizeMismatch { .. } => 2,
        _ => 3,
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Self {
            code: exit_code(&err),
            message: err.to_string(),
        }
    }
}

/// Attaches the file an error came from.
fn in_file(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |err| Failure {
        code: exit_code(&err),
        message: format!("{}: {err}", path.display()),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let threads = match cli.threads {
        Some(0) => return Err(Failure::usage("--threads must be at least 1")),
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    let file = match &cli.config {
        Some(path) => {
            check_input(path)?;
            Some(fs::read_to_string(path).map_err(|e| Failure::io(path, e))?)
        }
        None => None,
    };
    let mut flags = Vec::new();
    if let Some(seed) = cli.seed {
        flags.push(("seed".to_string(), seed.to_string()));
    }
    match &cli.command {
        Command::Train(a) => {
            a.train.push(&mut flags);
            a.search.push(&mut flags);
        }
        Command::XsimEval(a) => a.search.push(&mut flags),
        Command::Filter(a) => a.search.push(&mut flags),
        Command::Analyze(AnalyzeCommand::Histogram(a)) => a.train.push(&mut flags),
        Command::Analyze(AnalyzeCommand::Sweep(a)) => {
            a.train.push(&mut flags);
            a.search.push(&mut flags);
        }
        _ => {}
    }
    let settings = Settings::resolve(file.as_deref(), &flags).map_err(|e| match &cli.config {
        Some(path) if matches!(e, Error::Format { .. }) => in_file(path)(e),
        _ => e.into(),
    })?;
    pool.install(|| dispatch(&cli.command, &settings))
}

fn dispatch(cmd: &Command, s: &Settings) -> CliResult {
    match cmd {
        Command::InitEncoder(a) => init_encoder(a, s),
        Command::Embed(a) => embed(a, s),
        Command::Train(a) => train(a, s),
        Command::XsimEval(a) => xsim_eval(a, s),
        Command::Filter(a) => filter(a, s),
        Command::Analyze(AnalyzeCommand::Histogram(a)) => histogram(a, s),
        Command::Analyze(AnalyzeCommand::Sweep(a)) => sweep(a, s),
        Command::GenSynth(SynthCommand::Cipher(a)) => cipher(a, s),
        Command::GenSynth(SynthCommand::Noise(a)) => noise(a, s),
    }
}

fn check_input(path: &Path) -> CliResult {
    match fs::metadata(path) {
        Ok(m) if m.is_file() => Ok(()),
        Ok(_) => Err(Failure::io(path, "not a regular file")),
        Err(e) => Err(Failure::io(path, e)),
    }
}

fn check_output(path: &Path) -> CliResult {
    if path.is_dir() {
        return Err(Failure::io(path, "is a directory"));
    }
    let parent = parent_dir(path);
    if !parent.is_dir() {
        return Err(Failure::io(path, "parent directory does not exist"));
    }
    Ok(())
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Outputs staged as temp files; nothing is visible until `commit`.
#[derive(Default)]
struct Staged {
    files: Vec<(NamedTempFile, PathBuf)>,
}

impl Staged {
    fn write<F>(&mut self, path: &Path, f: F) -> CliResult
    where
        F: FnOnce(&mut BufWriter<&File>) -> crate::Result<()>,
    {
        let tmp = NamedTempFile::new_in(parent_dir(path)).map_err(|e| Failure::io(path, e))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            f(&mut w).map_err(in_file(path))?;
            w.flush().map_err(|e| Failure::io(path, e))?;
        }
        self.files.push((tmp, path.to_path_buf()));
        Ok(())
    }

    fn text(&mut self, path: &Path, text: &str) -> CliResult {
        self.write(path, |w| Ok(w.write_all(text.as_bytes())?))
    }

    fn commit(self) -> CliResult {
        for (tmp, path) in self.files {
            tmp.persist(&path).map_err(|e| Failure::io(&path, e.error))?;
        }
        Ok(())
    }
}

/// Resolved settings plus command-specific values, as `key=value` lines.
fn meta(command: &str, s: &Settings, extra: &[(&str, String)]) -> String {
    let mut out = format!("# codistill {command}\n{}", s.to_config_file());
    for (k, v) in extra {
        out.push_str(&format!("{k}={v}\n"));
    }
    out
}

fn read_corpus(path: &Path) -> CliResult<Vec<SentencePair>> {
    let f = File::open(path).map_err(|e| Failure::io(path, e))?;
    read_tsv(BufReader::new(f)).map_err(in_file(path))
}

fn read_matrix(path: &Path) -> CliResult<EmbeddingMatrix> {
    let f = File::open(path).map_err(|e| Failure::io(path, e))?;
    read_embeddings(BufReader::new(f)).map_err(in_file(path))
}

fn check_encoder(path: &Path) -> CliResult {
    check_input(path)?;
    check_input(&sidecar(path, "hdr"))
}

fn load_encoder(path: &Path) -> CliResult<EncoderParams> {
    let hdr = sidecar(path, "hdr");
    let text = fs::read_to_string(&hdr).map_err(|e| Failure::io(&hdr, e))?;
    let weights = read_matrix(path)?;
    EncoderParams::from_header_and_weights(&text, &weights).map_err(in_file(&hdr))
}

fn stage_encoder(out: &mut Staged, path: &Path, enc: &EncoderParams, echo: &str) -> CliResult {
    let weights = enc.weight_matrix()?;
    out.write(path, |w| write_embeddings(&weights, w).map(|_| ()))?;
    let header = format!("{}{}\n", comment_block(echo), enc.header_line());
    out.text(&sidecar(path, "hdr"), &header)
}

fn comment_block(text: &str) -> String {
    text.lines()
        .map(|l| if l.starts_with('#') { format!("{l}\n") } else { format!("# {l}\n") })
        .collect()
}

fn init_encoder(a: &InitArgs, s: &Settings) -> CliResult {
    check_output(&a.out)?;
    let featurizer = FeaturizerConfig {
        ngram_orders: a.orders.clone(),
        bucket_count: a.buckets,
        hash_seed: a.hash_seed,
    };
    let enc = EncoderParams::random_scaled(featurizer, a.dim, s.train.rng_seed, a.scale, !a.trainable)?;
    let echo = meta("init-encoder", s, &[("scale", a.scale.to_string())]);
    let mut out = Staged::default();
    stage_encoder(&mut out, &a.out, &enc, &echo)?;
    out.commit()
}

fn embed(a: &EmbedArgs, s: &Settings) -> CliResult {
    check_input(&a.corpus)?;
    check_encoder(&a.encoder)?;
    check_output(&a.out)?;
    let pairs = read_corpus(&a.corpus)?;
    let enc = load_encoder(&a.encoder)?;
    let sentences: Vec<&str> = pairs
        .iter()
        .map(|p| match a.side {
            Side::Source => p.source.as_str(),
            Side::Target => p.target.as_str(),
        })
        .collect();
    let m = enc.encode_batch(&sentences).map_err(in_file(&a.corpus))?;
    let side = match a.side {
        Side::Source => "source",
        Side::Target => "target",
    };
    let echo = meta(
        "embed",
        s,
        &[
            ("corpus", a.corpus.display().to_string()),
            ("encoder", a.encoder.display().to_string()),
            ("side", side.to_string()),
        ],
    );
    let mut out = Staged::default();
    out.write(&a.out, |w| write_embeddings(&m, w).map(|_| ()))?;
    out.text(&sidecar(&a.out, "meta"), &echo)?;
    out.commit()?;
    println!("wrote {} rows of dim {} to {}", m.rows(), m.dim(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs, s: &Settings) -> CliResult {
    check_input(&a.corpus)?;
    check_encoder(&a.teacher)?;
    if let Some(e) = &a.eval {
        check_input(e)?;
    }
    let log_path = a.log.clone().unwrap_or_else(|| sidecar(&a.out, "log"));
    check_output(&a.out)?;
    check_output(&log_path)?;

    let corpus = read_corpus(&a.corpus)?;
    let eval = a.eval.as_deref().map(read_corpus).transpose()?;
    let teacher = load_encoder(&a.teacher)?;
    let run = train_distill(&corpus, &teacher, &s.train).map_err(in_file(&a.corpus))?;

    let mut log = format!("# config {}\n", s.describe());
    for st in &run.trace {
        eprintln!("{st}");
        log.push_str(&format!("{st}\n"));
    }
    if let (Some(eval), Some(path)) = (&eval, &a.eval) {
        let err = evaluate(&run.student, &teacher, eval, s.search).map_err(in_file(path))?;
        let line = format!("heldout_error_rate={:.2}", err);
        println!("{line}");
        log.push_str(&format!("# {line}\n"));
    }
    let echo = meta(
        "train",
        s,
        &[
            ("corpus", a.corpus.display().to_string()),
            ("teacher", a.teacher.display().to_string()),
        ],
    );
    let mut out = Staged::default();
    stage_encoder(&mut out, &a.out, &run.student, &echo)?;
    out.text(&log_path, &log)?;
    out.commit()
}

fn xsim_eval(a: &XsimArgs, s: &Settings) -> CliResult {
    check_input(&a.src)?;
    check_input(&a.tgt)?;
    let src = read_matrix(&a.src)?;
    let tgt = read_matrix(&a.tgt)?;
    let result = align(&src, &tgt, s.search)?;
    println!("{}", report_line(&result, &s.search));
    Ok(())
}

fn filter(a: &FilterArgs, s: &Settings) -> CliResult {
    let mut budgets: Vec<BudgetSpec> = a.budget.iter().map(|&b| BudgetSpec::new(b)).collect();
    if a.presets {
        budgets.extend(BudgetSpec::presets());
    }
    budgets.sort_by_key(|b| b.budget);
    budgets.dedup();
    if a.scored_out.is_none() && budgets.is_empty() {
        return Err(Failure::usage("nothing to do: give --scored-out and/or --budget"));
    }
    if !budgets.is_empty() && a.subset_prefix.is_none() {
        return Err(Failure::usage("--budget needs --subset-prefix"));
    }
    check_input(&a.corpus)?;
    check_encoder(&a.student)?;
    check_encoder(&a.teacher)?;
    let subset_path = |b: &BudgetSpec| sidecar(a.subset_prefix.as_deref().unwrap(), &format!("{}.tsv", b.budget));
    if let Some(p) = &a.scored_out {
        check_output(p)?;
    }
    for b in &budgets {
        check_output(&subset_path(b))?;
    }

    let corpus = read_corpus(&a.corpus)?;
    let student = load_encoder(&a.student)?;
    let teacher = load_encoder(&a.teacher)?;
    let scored = score_corpus(&corpus, &student, &teacher, s.search, None).map_err(in_file(&a.corpus))?;

    let base = [
        ("corpus", a.corpus.display().to_string()),
        ("student", a.student.display().to_string()),
        ("teacher", a.teacher.display().to_string()),
    ];
    let mut out = Staged::default();
    if let Some(p) = &a.scored_out {
        out.write(p, |w| write_scored_tsv(&scored, w))?;
        out.text(&sidecar(p, "meta"), &meta("filter", s, &base))?;
    }
    for b in &budgets {
        let sel = select_by_token_budget(&scored, *b);
        let tokens: usize = sel.iter().map(|p| p.target_tokens).sum();
        println!("budget={} pairs={} tokens={}", b.budget, sel.len(), tokens);
        let path = subset_path(b);
        let mut extra = base.to_vec();
        extra.push(("budget", b.budget.to_string()));
        out.write(&path, |w| write_tsv(&to_pairs(&sel), w))?;
        out.text(&sidecar(&path, "meta"), &meta("filter", s, &extra))?;
    }
    out.commit()
}

fn histogram(a: &HistogramArgs, s: &Settings) -> CliResult {
    check_input(&a.corpus)?;
    check_encoder(&a.teacher)?;
    check_output(&a.out)?;
    let corpus = read_corpus(&a.corpus)?;
    let teacher = load_encoder(&a.teacher)?;
    let targets: Vec<String> = corpus.into_iter().map(|p| p.target).collect();
    let values = average_target_similarities(&targets, &teacher, &s.train).map_err(in_file(&a.corpus))?;
    let mut h = Histogram::new(a.bins)?;
    values.iter().for_each(|&v| h.add(v));
    let above = fraction_above(&values, a.threshold);
    println!("targets={} fraction_above_{}={:.4}", values.len(), a.threshold, above);
    let comment = format!("config {} fraction_above_{}={:.6}", s.describe(), a.threshold, above);
    let mut out = Staged::default();
    out.write(&a.out, |w| h.write_csv(s.train.shuffle, Some(&comment), w))?;
    out.commit()
}

fn sweep(a: &SweepArgs, s: &Settings) -> CliResult {
    check_input(&a.corpus)?;
    check_input(&a.eval)?;
    check_encoder(&a.teacher)?;
    check_output(&a.out)?;
    let corpus = read_corpus(&a.corpus)?;
    let eval = read_corpus(&a.eval)?;
    let teacher = load_encoder(&a.teacher)?;
    let rows = threshold_sweep(&a.sigmas, &s.train, &corpus, &teacher, &eval, s.search)?;
    for r in &rows {
        match &r.outcome {
            Ok(m) => println!(
                "sigma={} error_rate={:.2} kept_fraction={:.4}",
                r.sigma,
                m.error_rate,
                m.kept_fraction
            ),
            Err(e) => println!("sigma={} failed: {e}", r.sigma),
        }
    }
    let mut echoed = s.clone();
    echoed.train.prefilter_enabled = true;
    let comment = format!("config {} sigmas={:?}", echoed.describe(), a.sigmas);
    let mut out = Staged::default();
    out.write(&a.out, |w| write_sweep_csv(&rows, Some(&comment), w))?;
    out.commit()
}

fn cipher(a: &CipherArgs, s: &Settings) -> CliResult {
    if a.heldout > 0 && a.heldout_out.is_none() {
        return Err(Failure::usage("--heldout needs --heldout-out"));
    }
    check_output(&a.out)?;
    if let Some(p) = &a.heldout_out {
        check_output(p)?;
    }
    let seed = s.train.rng_seed;
    let spec = CipherSpec {
        vocab_size: a.vocab,
        min_len: a.min_len,
        max_len: a.max_len,
        map_seed: seed,
        corpus_size: a.size + a.heldout,
        corpus_seed: splitmix64(seed),
    };
    let mut pairs = gen_cipher_corpus(&spec)?;
    let heldout = pairs.split_off(a.size);
    let extra = [
        ("vocab", a.vocab.to_string()),
        ("min_len", a.min_len.to_string()),
        ("max_len", a.max_len.to_string()),
        ("size", a.size.to_string()),
        ("heldout", a.heldout.to_string()),
    ];
    let echo = meta("gen-synth cipher", s, &extra);
    let mut out = Staged::default();
    out.write(&a.out, |w| write_tsv(&pairs, w))?;
    out.text(&sidecar(&a.out, "meta"), &echo)?;
    if let Some(p) = &a.heldout_out {
        out.write(p, |w| write_tsv(&heldout, w))?;
        out.text(&sidecar(p, "meta"), &echo)?;
    }
    out.commit()
}

fn noise(a: &NoiseArgs, s: &Settings) -> CliResult {
    check_input(&a.corpus)?;
    check_output(&a.out)?;
    check_output(&a.labels_out)?;
    let pairs = read_corpus(&a.corpus)?;
    let noisy = inject_noise(&pairs, a.rate, s.train.rng_seed)?;
    let labels: String = noisy.labels.iter().map(|&l| if l { "1\n" } else { "0\n" }).collect();
    let echo = meta(
        "gen-synth noise",
        s,
        &[("corpus", a.corpus.display().to_string()), ("rate", a.rate.to_string())],
    );
    let mut out = Staged::default();
    out.write(&a.out, |w| write_tsv(&noisy.pairs, w))?;
    out.text(&sidecar(&a.out, "meta"), &echo)?;
    out.text(&a.labels_out, &labels)?;
    out.commit()
}
