//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! data, I/O and numerical failures. Every output file `F` gets a sidecar
//! `F.manifest.json` recording the command, its arguments, the resolved
//! configuration and SHA-256 hashes of all inputs and outputs.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{
    density, parse_interactions, parse_titles, preprocess, split_leave_one_out, train_frequency, Corpus,
    PreprocessOptions, SplitCorpus, Target,
};
use crate::error::{Error, Result};
use crate::eval::{coldstart_report, evaluate, EvalConfig, EvalReport, ModelScorer, Scorer, TopPopScorer};
use crate::net::{read_checkpoint, write_checkpoint, ModelParams};
use crate::rng;
use crate::simtable::{
    build_similarity_table, embed_titles_hashed, load_embeddings, EmbeddingFile, EmbeddingSet, SimilarityConfig,
    SimilarityTable,
};
use crate::train::{fit, write_optimizer_state, OptimizerState, TrainConfig, TrainLogEntry, TrainObserver};

#[derive(Debug, Parser)]
#[command(name = "simrec", version, about = "Similarity-augmented sequential recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a raw interaction log into a corpus.
    Preprocess(PreprocessArgs),
    /// Hashed character-trigram title embeddings.
    Embed(EmbedArgs),
    /// Build the item similarity table.
    Simtable(SimtableArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Sampled-negative evaluation.
    Eval(EvalArgs),
    /// Frequency-bucket breakdown of an evaluation report.
    Coldstart(ColdstartArgs),
    /// Print the interactions-per-item density of a corpus.
    Density(DensityArgs),
    /// Preprocess at several item-count thresholds.
    DensitySweep(SweepArgs),
}

#[derive(Debug, Args, Serialize)]
struct PreprocessArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    titles: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    min_item_count: usize,
    #[arg(long, default_value_t = 5)]
    min_user_len: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_require_title: bool,
}

#[derive(Debug, Args, Serialize)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimtableArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1000)]
    top_k: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    include_self: bool,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    simtable: Option<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// Plain BCE objective; no similarity table is used.
    #[arg(long)]
    baseline_bce: bool,
    /// Initialise item embeddings from these vectors.
    #[arg(long)]
    init_embeddings: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "test", value_parser = parse_target)]
    target: Target,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    toppop: bool,
    /// Leave per-user ranks out of the report.
    #[arg(long)]
    summary_only: bool,
}

#[derive(Debug, Args, Serialize)]
struct ColdstartArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct DensityArgs {
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    titles: Option<PathBuf>,
    #[arg(long, default_value = "0,5,10,15,20", value_parser = parse_thresholds)]
    thresholds: Thresholds,
    #[arg(long, default_value_t = 5)]
    min_user_len: usize,
    #[arg(long)]
    no_require_title: bool,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also train with and without the similarity loss at every threshold.
    #[arg(long)]
    full: bool,
    /// Training config, required with --full.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Item embeddings; hashed title trigrams when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    embed_dim: usize,
    #[arg(long, default_value_t = 1000)]
    top_k: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
struct Thresholds(Vec<usize>);

fn parse_target(s: &str) -> std::result::Result<Target, String> {
    match s {
        "test" => Ok(Target::Test),
        "valid" | "validation" => Ok(Target::Valid),
        other => Err(format!("unknown target {other:?}, expected test or valid")),
    }
}

fn parse_thresholds(s: &str) -> std::result::Result<Thresholds, String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| format!("{v:?} is not a non-negative integer")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    validate_thresholds(&values).map_err(|e| e.to_string())?;
    Ok(Thresholds(values))
}

/// Sweep thresholds must be non-empty and strictly increasing.
pub fn validate_thresholds(values: &[usize]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config("at least one threshold is required"));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("thresholds must be strictly increasing"));
    }
    Ok(())
}

struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = std::env::var("SIMREC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let outcome = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Simtable(a) => cmd_simtable(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Coldstart(a) => cmd_coldstart(&a),
        Command::Density(a) => cmd_density(&a),
        Command::DensitySweep(a) => cmd_sweep(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Tracks input and output hashes for the manifest.
struct Manifest {
    command: &'static str,
    args: Value,
    config: Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Manifest {
    fn new(command: &'static str, args: &impl Serialize) -> Self {
        Manifest {
            command,
            args: serde_json::to_value(args).unwrap_or(Value::Null),
            config: Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read_file(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        self.outputs.insert(path.display().to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn record_output(&mut self, path: &Path) -> Result<()> {
        let bytes = read_file(path)?;
        self.outputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Writes one manifest beside every recorded output.
    fn finish(&self) -> Result<()> {
        let doc = json!({
            "command": self.command,
            "args": self.args,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        for out in self.outputs.keys() {
            fs::write(format!("{out}.manifest.json"), &text)?;
        }
        Ok(())
    }
}

fn load_corpus(m: &mut Manifest, path: &Path) -> Result<Corpus> {
    let bytes = m.input(path)?;
    Corpus::read(&mut bytes.as_slice())
}

fn load_titles(m: &mut Manifest, path: Option<&Path>) -> Result<HashMap<String, String>> {
    match path {
        Some(p) => parse_titles(BufReader::new(m.input(p)?.as_slice())),
        None => Ok(HashMap::new()),
    }
}

fn cmd_preprocess(a: &PreprocessArgs) -> CliResult {
    let require_title = !a.no_require_title;
    if require_title && a.titles.is_none() {
        return Err(usage("--titles is required unless --no-require-title is given"));
    }
    let mut m = Manifest::new("preprocess", a);
    let log = parse_interactions(BufReader::new(m.input(&a.interactions)?.as_slice()))?;
    let titles = load_titles(&mut m, a.titles.as_deref())?;
    let opts = PreprocessOptions {
        min_item_count: a.min_item_count,
        min_user_len: a.min_user_len,
        require_title,
    };
    let corpus = preprocess(&log, &titles, opts)?;
    let mut buf = Vec::new();
    corpus.write(&mut buf)?;
    m.output(&a.out, &buf)?;
    m.finish()?;
    println!(
        "{}",
        json!({
            "users": corpus.user_count(),
            "items": corpus.item_count(),
            "interactions": corpus.interaction_count(),
            "density": density(&corpus)?,
        })
    );
    Ok(())
}

fn cmd_embed(a: &EmbedArgs) -> CliResult {
    let mut m = Manifest::new("embed", a);
    let corpus = load_corpus(&mut m, &a.corpus)?;
    let emb = embed_titles_hashed(&corpus, a.dim, a.seed)?;
    let mut buf = Vec::new();
    emb.write(corpus.item_ids(), &mut buf)?;
    m.output(&a.out, &buf)?;
    m.finish()?;
    Ok(())
}

fn load_embedding_set(m: &mut Manifest, path: &Path, corpus: &Corpus) -> Result<EmbeddingSet> {
    let file = EmbeddingFile::parse(&m.input(path)?)?;
    load_embeddings(&file, corpus)
}

fn cmd_simtable(a: &SimtableArgs) -> CliResult {
    let cfg = SimilarityConfig {
        top_k: a.top_k,
        threshold: a.threshold,
        temperature: a.temperature,
        include_self: a.include_self,
    };
    cfg.validate()?;
    let mut m = Manifest::new("simtable", a);
    m.config = serde_json::to_value(cfg).map_err(Error::from)?;
    let corpus = load_corpus(&mut m, &a.corpus)?;
    let emb = load_embedding_set(&mut m, &a.embeddings, &corpus)?;
    let table = build_similarity_table(&emb, &cfg)?;
    let mut buf = Vec::new();
    table.write(&mut buf)?;
    m.output(&a.out, &buf)?;
    m.finish()?;
    let report = table.report();
    eprintln!(
        "{} items, {} entries, {} empty rows",
        report.items, report.entries, report.empty_rows
    );
    Ok(())
}

struct CliObserver {
    log: BufWriter<File>,
    out: PathBuf,
    optim: PathBuf,
}

impl TrainObserver for CliObserver {
    fn on_step(&mut self, entry: &TrainLogEntry) -> Result<()> {
        serde_json::to_writer(&mut self.log, entry)?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    fn on_checkpoint(&mut self, _epoch: usize, params: &ModelParams, state: &OptimizerState) -> Result<()> {
        let mut w = BufWriter::new(File::create(&self.out)?);
        write_checkpoint(params, &mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(&self.optim)?);
        write_optimizer_state(state, &mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Reads a training config and fills the vocabulary size from the corpus.
fn resolve_train_config(bytes: &[u8], corpus: &Corpus) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = serde_json::from_slice(bytes)?;
    if cfg.net.vocab_size == 0 {
        cfg.net.vocab_size = corpus.item_count();
    } else if cfg.net.vocab_size != corpus.item_count() {
        return Err(Error::config(format!(
            "config vocab_size {} does not match corpus vocabulary {}",
            cfg.net.vocab_size,
            corpus.item_count()
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    if !a.baseline_bce && a.simtable.is_none() {
        return Err(usage("--simtable is required unless --baseline-bce is given"));
    }
    let mut m = Manifest::new("train", a);
    let corpus = load_corpus(&mut m, &a.corpus)?;
    let mut cfg = resolve_train_config(&m.input(&a.config)?, &corpus)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let table = match (&a.simtable, a.baseline_bce) {
        (Some(p), false) => Some(SimilarityTable::read(&mut m.input(p)?.as_slice())?),
        _ => None,
    };
    if a.baseline_bce {
        cfg.lambda0 = 0.0;
    }
    let init = match &a.init_embeddings {
        Some(p) => Some(load_embedding_set(&mut m, p, &corpus)?),
        None => None,
    };
    m.config = serde_json::to_value(&cfg).map_err(Error::from)?;
    let split = split_leave_one_out(corpus)?;
    for p in [&a.out, &a.log] {
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(Error::from)?;
        }
    }
    let optim = PathBuf::from(format!("{}.optim", a.out.display()));
    let mut observer = CliObserver {
        log: BufWriter::new(File::create(&a.log).map_err(Error::from)?),
        out: a.out.clone(),
        optim: optim.clone(),
    };
    let params = fit(&split, table.as_ref(), &cfg, init.as_ref(), &mut observer)?;
    observer.log.flush().map_err(Error::from)?;
    drop(observer);
    let mut buf = Vec::new();
    write_checkpoint(&params, &mut buf)?;
    m.output(&a.out, &buf)?;
    m.record_output(&optim)?;
    m.record_output(&a.log)?;
    m.finish()?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let cfg = EvalConfig {
        k: a.k,
        num_negatives: a.negatives,
        repeats: a.repeats,
        seed: a.seed,
        target: a.target,
    };
    cfg.validate()?;
    if !a.toppop && a.model.is_none() {
        return Err(usage("--model is required unless --toppop is given"));
    }
    let mut m = Manifest::new("eval", a);
    m.config = serde_json::to_value(cfg).map_err(Error::from)?;
    let split = split_leave_one_out(load_corpus(&mut m, &a.corpus)?)?;
    let freq = train_frequency(&split);
    let (params, hash) = match (&a.model, a.toppop) {
        (Some(p), false) => {
            let bytes = m.input(p)?;
            let params = read_checkpoint(&mut bytes.as_slice())?;
            if params.config.vocab_size != split.item_count() {
                return Err(Error::format(format!(
                    "model vocabulary {} does not match corpus vocabulary {}",
                    params.config.vocab_size,
                    split.item_count()
                ))
                .into());
            }
            (Some(params), Some(sha256_hex(&bytes)))
        }
        _ => (None, None),
    };
    let scorer: Box<dyn Scorer + '_> = match &params {
        Some(p) => Box::new(ModelScorer { params: p }),
        None => Box::new(TopPopScorer { freq: &freq }),
    };
    let mut report = evaluate(scorer.as_ref(), &split, &cfg)?;
    report.metadata.model_hash = hash;
    if a.summary_only {
        report = report.without_per_user();
    }
    let text = report.to_json()? + "\n";
    m.output(&a.report, text.as_bytes())?;
    m.finish()?;
    println!("HR@{} {:.4}  NDCG@{} {:.4}", cfg.k, report.mean_hr, cfg.k, report.mean_ndcg);
    Ok(())
}

fn cmd_coldstart(a: &ColdstartArgs) -> CliResult {
    let mut m = Manifest::new("coldstart", a);
    let report: EvalReport = serde_json::from_slice(&m.input(&a.report)?).map_err(Error::from)?;
    let split = split_leave_one_out(load_corpus(&mut m, &a.corpus)?)?;
    if report.targets.len() != split.users().len() {
        return Err(Error::format("report and corpus disagree on the number of users").into());
    }
    let buckets = coldstart_report(&report, &train_frequency(&split))?;
    let text = serde_json::to_string_pretty(&json!({ "k": report.config.k, "buckets": buckets }))
        .map_err(Error::from)?
        + "\n";
    m.output(&a.out, text.as_bytes())?;
    m.finish()?;
    for (b, row) in buckets.0.iter().enumerate() {
        println!(
            "{:>4} {:>7} {:.4} {:.4}",
            crate::eval::bucket_label(b),
            row.count,
            row.hr,
            row.ndcg
        );
    }
    Ok(())
}

fn cmd_density(a: &DensityArgs) -> CliResult {
    let bytes = read_file(&a.corpus)?;
    let corpus = Corpus::read(&mut bytes.as_slice())?;
    println!("{}", density(&corpus)?);
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    n: usize,
    users: usize,
    items: usize,
    interactions: usize,
    density: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<SweepComparison>,
}

#[derive(Debug, Serialize)]
struct SweepComparison {
    hr_similarity: f64,
    ndcg_similarity: f64,
    hr_baseline: f64,
    ndcg_baseline: f64,
    hr_gain: f64,
    ndcg_gain: f64,
}

fn relative_gain(new: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (new - base) / base
    }
}

fn cmd_sweep(a: &SweepArgs) -> CliResult {
    let require_title = !a.no_require_title;
    if require_title && a.titles.is_none() {
        return Err(usage("--titles is required unless --no-require-title is given"));
    }
    if a.full && a.config.is_none() {
        return Err(usage("--full needs --config"));
    }
    let sim_cfg = SimilarityConfig {
        top_k: a.top_k,
        threshold: a.threshold,
        temperature: a.temperature,
        include_self: false,
    };
    let eval_cfg = EvalConfig {
        k: a.k,
        num_negatives: a.negatives,
        repeats: a.repeats,
        seed: a.seed,
        target: Target::Test,
    };
    if a.full {
        sim_cfg.validate()?;
        eval_cfg.validate()?;
    }
    let mut m = Manifest::new("density-sweep", a);
    let log = parse_interactions(BufReader::new(m.input(&a.interactions)?.as_slice()))?;
    let titles = load_titles(&mut m, a.titles.as_deref())?;
    let train_bytes = match &a.config {
        Some(p) if a.full => Some(m.input(p)?),
        _ => None,
    };
    let emb_bytes = match &a.embeddings {
        Some(p) if a.full => Some(m.input(p)?),
        _ => None,
    };
    fs::create_dir_all(&a.out_dir).map_err(Error::from)?;

    let mut rows = Vec::new();
    for &n in &a.thresholds.0 {
        let at_n = |e: Error| {
            let f = Failure::from(e);
            Failure { code: f.code, message: format!("threshold n={n}: {}", f.message) }
        };
        let opts = PreprocessOptions { min_item_count: n, min_user_len: a.min_user_len, require_title };
        let corpus = preprocess(&log, &titles, opts).map_err(at_n)?;
        let mut buf = Vec::new();
        corpus.write(&mut buf).map_err(at_n)?;
        m.output(&a.out_dir.join(format!("n{n}.corpus")), &buf).map_err(at_n)?;
        let mut row = SweepRow {
            n,
            users: corpus.user_count(),
            items: corpus.item_count(),
            interactions: corpus.interaction_count(),
            density: density(&corpus).map_err(at_n)?,
            comparison: None,
        };
        if let Some(cfg_bytes) = &train_bytes {
            let mut cfg = resolve_train_config(cfg_bytes, &corpus).map_err(at_n)?;
            cfg.seed = rng::derive_seed(a.seed, rng::TAG_SWEEP, n as u64, 0);
            let emb = match &emb_bytes {
                Some(bytes) => load_embeddings(&EmbeddingFile::parse(bytes).map_err(at_n)?, &corpus),
                None => embed_titles_hashed(&corpus, a.embed_dim, a.seed),
            }
            .map_err(at_n)?;
            let table = build_similarity_table(&emb, &sim_cfg).map_err(at_n)?;
            let split = split_leave_one_out(corpus).map_err(at_n)?;
            row.comparison = Some(compare(&split, &table, &cfg, &eval_cfg).map_err(at_n)?);
        }
        rows.push(row);
    }
    let text = serde_json::to_string_pretty(&json!({ "rows": rows })).map_err(Error::from)? + "\n";
    m.output(&a.out_dir.join("sweep.json"), text.as_bytes())?;
    m.finish()?;
    for r in &rows {
        println!("n={:<3} users={} items={} interactions={} density={:.2}", r.n, r.users, r.items, r.interactions, r.density);
    }
    Ok(())
}

fn compare(split: &SplitCorpus, table: &SimilarityTable, cfg: &TrainConfig, eval_cfg: &EvalConfig) -> Result<SweepComparison> {
    let with = fit(split, Some(table), cfg, None, &mut ())?;
    let mut base_cfg = cfg.clone();
    base_cfg.lambda0 = 0.0;
    let without = fit(split, None, &base_cfg, None, &mut ())?;
    let r_with = evaluate(&ModelScorer { params: &with }, split, eval_cfg)?;
    let r_without = evaluate(&ModelScorer { params: &without }, split, eval_cfg)?;
    Ok(SweepComparison {
        hr_similarity: r_with.mean_hr,
        ndcg_similarity: r_with.mean_ndcg,
        hr_baseline: r_without.mean_hr,
        ndcg_baseline: r_without.mean_ndcg,
        hr_gain: relative_gain(r_with.mean_hr, r_without.mean_hr),
        ndcg_gain: relative_gain(r_with.mean_ndcg, r_without.mean_ndcg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_lists() {
        assert_eq!(parse_thresholds("0,5,10").unwrap().0, vec![0, 5, 10]);
        assert!(parse_thresholds("5,5").is_err());
        assert!(parse_thresholds("3,1").is_err());
        assert!(parse_thresholds("-1").is_err());
        assert!(matches!(validate_thresholds(&[5, 5]), Err(Error::Config(_))));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["simrec"]), 1);
        assert_eq!(run(["simrec", "train"]), 1);
        assert_eq!(run(["simrec", "density", "--corpus", "x", "--bogus"]), 1);
        assert_eq!(run(["simrec", "--help"]), 0);
    }

    #[test]
    fn missing_input_exits_two() {
        assert_eq!(run(["simrec", "density", "--corpus", "/nonexistent/file.corpus"]), 2);
    }

    #[test]
    fn targets() {
        assert_eq!(parse_target("valid").unwrap(), Target::Valid);
        assert!(parse_target("train").is_err());
    }
}
