//! Command-line front end. Every command reads its inputs, writes its artifacts
//! into `--out` and records a `manifest.json` there with the flags, the seed and
//! SHA-256 digests of every input file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analogy::{self, compare_table, evaluate, load_questions, read_bindings, suggest_binding, EvalMode};
use crate::analysis::{self, BarTarget, FactorNames};
use crate::dict_learn::{self, train_from, Checkpoint, TrainConfig, TrainOptions, Trainer, TrainerState};
use crate::embeddings::{load_embeddings, EmbeddingSet, FrequencyMode};
use crate::error::{Error, Result};
use crate::groups::{FactorGrouping, GroupAggregate, DEFAULT_K_CLUSTERS, DEFAULT_K_NN};
use crate::neighbors::Metric;
use crate::sparse_code::{column_objectives, sparsify, SparseCoder, SparseCodes};
use crate::svg;

pub const MANIFEST: &str = "manifest.json";
pub const CODES_FILE: &str = "codes.wfsc";
pub const GROUPS_FILE: &str = "groups.tsv";

#[derive(Debug, Parser, Serialize)]
#[command(name = "wordfactors", version, about = "Learn, group and inspect word factors of pretrained embeddings")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). 1 makes runs bit-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbeddingArgs {
    /// GloVe-style text file, or word2vec binary when the name ends in `.bin`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Read only the first N words.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Word frequencies: zipf, uniform or counts:<path>.
    #[arg(long, default_value = "zipf")]
    pub freq: String,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Learn a dictionary.
    Train(TrainArgs),
    /// Infer sparse codes for every word.
    Infer(InferArgs),
    /// Cluster factors into groups.
    Group(GroupArgs),
    /// Top words of factors, activation bars and co-activation heat maps.
    InspectFactor(InspectArgs),
    /// Show words as sums of factors, optionally with a PCA view.
    Decompose(DecomposeArgs),
    /// Add or remove factors from a word and list its new neighbours.
    Manipulate(ManipulateArgs),
    /// Run the analogy benchmark, suggest bindings or generate pairs.
    Analogy(AnalogyArgs),
    /// Bundle factor listings, decompositions and analogy tables.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Number of factors.
    #[arg(long, default_value_t = 1000)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 500)]
    pub fista_steps: usize,
    /// Stop FISTA early once the relative objective change falls below this.
    #[arg(long, default_value_t = 0.0)]
    pub fista_tol: f64,
    #[arg(long, default_value_t = 200_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 1.0)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub hessian_epsilon: f64,
    /// Idle steps before a factor is re-initialized.
    #[arg(long, default_value_t = 5000)]
    pub dead_patience: u64,
    #[arg(long, default_value_t = 10_000)]
    pub checkpoint_every: u64,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Planted dictionary checkpoint; recovery is logged at every probe.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    #[arg(long)]
    pub dictionary: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub fista_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub fista_tol: f64,
    /// Words coded per batch.
    #[arg(long, default_value_t = 1000)]
    pub batch: usize,
    /// Coefficients at or below this are dropped.
    #[arg(long, default_value_t = crate::sparse_code::DEFAULT_SPARSIFY_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct GroupArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    #[arg(long)]
    pub codes: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K_NN)]
    pub k_nn: usize,
    #[arg(long, default_value_t = DEFAULT_K_CLUSTERS)]
    pub k_clusters: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Sum,
    Max,
}

impl From<Aggregate> for GroupAggregate {
    fn from(a: Aggregate) -> Self {
        match a {
            Aggregate::Sum => GroupAggregate::Sum,
            Aggregate::Max => GroupAggregate::Max,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InspectArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    #[arg(long)]
    pub codes: PathBuf,
    /// Factors to profile (repeatable); all factors when omitted.
    #[arg(long)]
    pub factor: Vec<usize>,
    /// Share of weighted activation the listed top words must cover.
    #[arg(long, default_value_t = analysis::DEFAULT_PROFILE_MASS)]
    pub mass: f64,
    /// `factor_id TAB name` file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Words for activation bars, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tokens: Vec<String>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Also draw bars and a co-activation heat map for this group.
    #[arg(long, requires = "groups")]
    pub group: Option<usize>,
    #[arg(long, value_enum, default_value_t = Aggregate::Sum)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    #[arg(long)]
    pub codes: PathBuf,
    /// Words to decompose (repeatable or comma separated).
    #[arg(long, required = true, value_delimiter = ',')]
    pub token: Vec<String>,
    #[arg(long, default_value_t = analysis::DEFAULT_DECOMPOSE_TOP)]
    pub top: usize,
    /// Divide coefficients by the word's total coefficient mass.
    #[arg(long)]
    pub normalized: bool,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// `group_id TAB name` file used when a factor has no label of its own.
    #[arg(long, requires = "groups")]
    pub group_labels: Option<PathBuf>,
    /// Also project the tokens onto their top two principal directions.
    #[arg(long)]
    pub pca: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ManipulateArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    #[arg(long)]
    pub dictionary: PathBuf,
    #[arg(long)]
    pub token: String,
    /// FACTOR:COEF, e.g. 337:4 or 12:-4 (repeatable).
    #[arg(long, allow_hyphen_values = true)]
    pub edit: Vec<String>,
    #[arg(long, default_value = "cosine")]
    pub metric: String,
    #[arg(long)]
    pub exclude_self: bool,
    #[arg(long, default_value_t = analysis::DEFAULT_NEIGHBORS)]
    pub k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalogyArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// `: category` / `A B C D` question file.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// `task_name TAB group_id` file; enables the grouped solver.
    #[arg(long, requires_all = ["codes", "groups"])]
    pub bindings: Option<PathBuf>,
    #[arg(long, default_value_t = analogy::DEFAULT_HORIZON)]
    pub horizon: usize,
    /// Suggest a group per task from the top-N activated words of each group.
    #[arg(long, requires_all = ["codes", "groups"])]
    pub suggest_bindings: Option<usize>,
    /// Generate base/derived pairs for this factor.
    #[arg(long, requires_all = ["codes", "dictionary"])]
    pub pairs_factor: Option<usize>,
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    pub coef: f64,
    #[arg(long, default_value_t = 20)]
    pub max_pairs: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    #[arg(long)]
    pub codes: PathBuf,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Words to decompose, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub words: Vec<String>,
    #[arg(long, default_value_t = analysis::DEFAULT_PROFILE_MASS)]
    pub mass: f64,
    #[arg(long)]
    pub questions: Option<PathBuf>,
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long, requires = "groups")]
    pub bindings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest { path: path.to_path_buf(), bytes, sha256: hex::encode(hasher.finalize()) })
}

/// Bookkeeping for one command run.
struct Run<'a> {
    out: &'a Path,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(out: &'a Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Run { out, inputs: Vec::new(), outputs: Vec::new() })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "required input not found")));
        }
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(format!("serializing {name}: {e}")))?;
        self.text(name, &(text + "\n"))
    }

    fn embeddings(&mut self, args: &EmbeddingArgs) -> Result<EmbeddingSet> {
        self.input(&args.embeddings)?;
        let mode: FrequencyMode = args.freq.parse()?;
        if let FrequencyMode::Counts(p) = &mode {
            self.input(p)?;
        }
        load_embeddings(&args.embeddings, args.limit)?.set_frequencies(&mode)
    }

    fn codes(&mut self, path: &Path, es: &EmbeddingSet) -> Result<SparseCodes> {
        self.input(path)?;
        let codes = SparseCodes::load(path)?;
        if codes.len() != es.len() {
            return Err(Error::Dimension(format!(
                "{} holds codes for {} words, embeddings have {}",
                path.display(),
                codes.len(),
                es.len()
            )));
        }
        Ok(codes)
    }

    fn checkpoint(&mut self, path: &Path) -> Result<Checkpoint> {
        self.input(path)?;
        Checkpoint::load(path)
    }

    fn grouping(&mut self, path: &Path, labels: Option<&Path>) -> Result<FactorGrouping> {
        self.input(path)?;
        if let Some(l) = labels {
            self.input(l)?;
        }
        FactorGrouping::load(path, labels)
    }

    fn finish(mut self, cli: &Cli, command: &str, started: Instant) -> Result<()> {
        let inputs = self.inputs.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>>>()?;
        let config = serde_json::to_value(&cli.command).map_err(|e| Error::Numeric(e.to_string()))?;
        let manifest = RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cli.seed,
            threads: cli.threads,
            config,
            inputs,
            outputs: std::mem::take(&mut self.outputs),
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        self.json(MANIFEST, &manifest)
    }
}

/// Parses arguments from the process and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let mut run = Run::new(&cli.out)?;
    let name = match &cli.command {
        Command::Train(a) => {
            cmd_train(cli, a, &mut run)?;
            "train"
        }
        Command::Infer(a) => {
            cmd_infer(a, &mut run)?;
            "infer"
        }
        Command::Group(a) => {
            cmd_group(cli, a, &mut run)?;
            "group"
        }
        Command::InspectFactor(a) => {
            cmd_inspect(a, &mut run)?;
            "inspect-factor"
        }
        Command::Decompose(a) => {
            cmd_decompose(a, &mut run)?;
            "decompose"
        }
        Command::Manipulate(a) => {
            cmd_manipulate(a, &mut run)?;
            "manipulate"
        }
        Command::Analogy(a) => {
            cmd_analogy(a, &mut run)?;
            "analogy"
        }
        Command::Report(a) => {
            cmd_report(a, &mut run)?;
            "report"
        }
    };
    run.finish(cli, name, started)
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    config: &'a TrainConfig,
    steps: u64,
    final_probe_objective: f64,
    max_column_norm: f64,
    revived_factors: u64,
    recovery_min_cosine: Option<f64>,
    recovery_mean_cosine: Option<f64>,
}

fn cmd_train(cli: &Cli, a: &TrainArgs, run: &mut Run<'_>) -> Result<()> {
    let es = run.embeddings(&a.emb)?;
    let cfg = TrainConfig {
        factors: a.dim,
        lambda: a.lambda,
        batch_size: a.batch,
        fista_steps: a.fista_steps,
        fista_tol: a.fista_tol,
        total_steps: a.steps,
        learning_rate: a.learning_rate,
        hessian_epsilon: a.hessian_epsilon,
        seed: cli.seed,
        dead_factor_patience: a.dead_patience,
    };
    let truth = a.truth.as_deref().map(|p| run.checkpoint(p)).transpose()?.map(|c| c.dict.atoms().clone());
    let trainer = match &a.resume {
        None => Trainer::new(&es, cfg.clone())?,
        Some(p) => {
            let mut ckpt = run.checkpoint(p)?;
            if ckpt.dict.factors() != cfg.factors {
                return Err(Error::Dimension(format!(
                    "checkpoint has {} factors, --dim is {}",
                    ckpt.dict.factors(),
                    cfg.factors
                )));
            }
            ckpt.dict.lambda = cfg.lambda;
            Trainer::from_state(&es, cfg.clone(), TrainerState::from_checkpoint(ckpt, cli.seed))?
        }
    };
    let opts = TrainOptions { checkpoint_every: a.checkpoint_every, out_dir: Some(run.out.to_path_buf()), truth };
    let outcome = train_from(trainer, &opts)?;
    run.outputs.push(dict_learn::FINAL_CHECKPOINT.into());
    run.outputs.push(dict_learn::PROBE_LOG.into());
    let last = outcome.log.last().expect("probe log is never empty");
    let rec = opts.truth.as_ref().map(|t| dict_learn::recovery(t, outcome.state.dict.atoms()));
    let summary = TrainSummary {
        config: &cfg,
        steps: outcome.state.step,
        final_probe_objective: last.objective,
        max_column_norm: last.max_column_norm,
        revived_factors: outcome.revived,
        recovery_min_cosine: rec.as_ref().map(|r| r.min_cosine),
        recovery_mean_cosine: rec.as_ref().map(|r| r.mean_cosine),
    };
    run.json("train_summary.json", &summary)?;
    eprintln!(
        "trained {} steps, probe objective {:.6}{}",
        summary.steps,
        summary.final_probe_objective,
        rec.map(|r| format!(", recovery min cosine {:.4}", r.min_cosine)).unwrap_or_default()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct InferSummary {
    words: usize,
    factors: usize,
    mean_objective: f64,
    mean_reconstruction_error: f64,
    mean_l0: f64,
}

/// Per-word results of one coded batch.
struct CodedBatch {
    codes: SparseCodes,
    objectives: Vec<f64>,
    errors: Vec<f64>,
}

fn cmd_infer(a: &InferArgs, run: &mut Run<'_>) -> Result<()> {
    let es = run.embeddings(&a.emb)?;
    let ckpt = run.checkpoint(&a.dictionary)?;
    if ckpt.dict.dim() != es.dim() {
        return Err(Error::Dimension(format!(
            "checkpoint is {}-dimensional, embeddings are {}-dimensional",
            ckpt.dict.dim(),
            es.dim()
        )));
    }
    if a.batch == 0 || a.fista_steps == 0 {
        return Err(Error::InvalidArgument("--batch and --fista-steps must be >= 1".into()));
    }
    let dict = ckpt.dict;
    let coder = SparseCoder::new(&dict);
    let starts: Vec<usize> = (0..es.len()).step_by(a.batch).collect();
    let batches: Vec<CodedBatch> = starts
        .par_iter()
        .map(|&s| -> Result<CodedBatch> {
            let idx: Vec<usize> = (s..(s + a.batch).min(es.len())).collect();
            let x = es.gather(&idx);
            let out = coder.infer(&x, a.fista_steps, a.fista_tol)?;
            let residual = dict.atoms() * &out.codes - &x;
            let errors = residual.column_iter().map(|c| c.norm_squared()).collect();
            let objectives = column_objectives(&dict, &x, &out.codes);
            Ok(CodedBatch { codes: sparsify(&out.codes, a.threshold)?, objectives, errors })
        })
        .collect::<Result<_>>()?;

    let mut codes = SparseCodes::empty(dict.factors(), 0);
    let mut objectives = Vec::with_capacity(es.len());
    let mut errors = Vec::with_capacity(es.len());
    for b in batches {
        codes.extend(b.codes)?;
        objectives.extend(b.objectives);
        errors.extend(b.errors);
    }
    codes.save(run.path(CODES_FILE))?;

    let path = run.path("objectives.csv");
    let to_io = |e: csv::Error| Error::io(&path, e.into());
    let mut w = csv::Writer::from_path(&path).map_err(to_io)?;
    w.write_record(["word", "objective", "reconstruction_error", "l0"]).map_err(to_io)?;
    for i in 0..es.len() {
        w.write_record([
            es.word(i).to_string(),
            objectives[i].to_string(),
            errors[i].to_string(),
            codes.column(i).len().to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let n = es.len().max(1) as f64;
    let summary = InferSummary {
        words: es.len(),
        factors: dict.factors(),
        mean_objective: objectives.iter().sum::<f64>() / n,
        mean_reconstruction_error: errors.iter().sum::<f64>() / n,
        mean_l0: codes.nnz() as f64 / n,
    };
    eprintln!(
        "coded {} words: mean objective {:.6}, mean squared error {:.6}, mean l0 {:.2}",
        summary.words, summary.mean_objective, summary.mean_reconstruction_error, summary.mean_l0
    );
    run.json("infer_summary.json", &summary)
}

fn cmd_group(cli: &Cli, a: &GroupArgs, run: &mut Run<'_>) -> Result<()> {
    let es = run.embeddings(&a.emb)?;
    let codes = run.codes(&a.codes, &es)?;
    let grouping = FactorGrouping::from_codes(&codes, es.freq(), a.k_nn, a.k_clusters, cli.seed)?;
    grouping.save(run.path(GROUPS_FILE))?;
    let mut sizes = vec![0usize; grouping.k_clusters];
    for &g in &grouping.assignment {
        sizes[g] += 1;
    }
    let summary = serde_json::json!({
        "factors": grouping.factors(),
        "k_nn": a.k_nn,
        "k_clusters": a.k_clusters,
        "group_sizes": sizes,
    });
    run.json("groups_summary.json", &summary)
}

fn profile_names(profiles: &mut [analysis::FactorProfile], labels: &BTreeMap<usize, String>) {
    for p in profiles {
        p.suggested_name = labels.get(&p.factor_id).cloned();
    }
}

fn warn_unknown(unknown: &[String]) {
    if !unknown.is_empty() {
        eprintln!("warning: unknown tokens skipped: {}", unknown.join(", "));
    }
}

fn cmd_inspect(a: &InspectArgs, run: &mut Run<'_>) -> Result<()> {
    let es = run.embeddings(&a.emb)?;
    let codes = run.codes(&a.codes, &es)?;
    let names = match &a.labels {
        Some(p) => {
            run.input(p)?;
            FactorNames::load(Some(p), None)?.factors
        }
        None => BTreeMap::new(),
    };
    let mut profiles = if a.factor.is_empty() {
        analysis::factor_profiles(&codes, &es, a.mass)?
    } else {
        a.factor.iter().map(|&f| analysis::factor_profile(&codes, &es, f, a.mass)).collect::<Result<Vec<_>>>()?
    };
    profile_names(&mut profiles, &names);
    analysis::write_profiles_csv(&profiles, run.path("profiles.csv"))?;
    run.json("profiles.json", &profiles)?;
    let flagged = profiles.iter().filter(|p| p.unidentifiable).count();
    eprintln!("{} factor profiles, {flagged} flagged unidentifiable", profiles.len());

    let mut unknown = Vec::new();
    if !a.tokens.is_empty() {
        for &f in &a.factor {
            let bars = analysis::activation_bars(&codes, &es, BarTarget::Factor(f), &a.tokens)?;
            analysis::write_bars_csv(&bars.values, run.path(&format!("bars-factor-{f}.csv")))?;
            let title = names.get(&f).map_or_else(|| format!("factor {f}"), |n| format!("factor {f} ({n})"));
            run.text(&format!("bars-factor-{f}.svg"), &svg::bar_chart(&title, &bars.values))?;
            unknown = bars.unknown;
        }
    }
    if let (Some(gpath), Some(g)) = (&a.groups, a.group) {
        let grouping = run.grouping(gpath, None)?;
        let target = BarTarget::Group { grouping: &grouping, group: g, aggregate: a.aggregate.into() };
        let bars = analysis::activation_bars(&codes, &es, target, &a.tokens)?;
        analysis::write_bars_csv(&bars.values, run.path(&format!("bars-group-{g}.csv")))?;
        run.text(&format!("bars-group-{g}.svg"), &svg::bar_chart(&format!("group {g}"), &bars.values))?;
        let known: Vec<String> = bars.values.iter().map(|v| v.0.clone()).collect();
        let heat = analysis::coactivation_heatmap(&codes, &es, &grouping, g, &known)?;
        analysis::write_heatmap_csv(&heat, run.path(&format!("heatmap-group-{g}.csv")))?;
        let rows: Vec<String> = heat.factors.iter().map(|f| f.to_string()).collect();
        run.text(
            &format!("heatmap-group-{g}.svg"),
            &svg::heatmap(&format!("group {g} co-activation"), &rows, &heat.tokens, &heat.values),
        )?;
        unknown = bars.unknown;
    }
    warn_unknown(&unknown);
    if !unknown.is_empty() {
        run.json("unknown_tokens.json", &unknown)?;
    }
    Ok(())
}

fn cmd_decompose(a: &DecomposeArgs, run: &mut Run<'_>) -> Result<()> {
    let es = run.embeddings(&a.emb)?;
    let codes = run.codes(&a.codes, &es)?;
    let grouping = a.groups.as_deref().map(|g| run.grouping(g, a.group_labels.as_deref())).transpose()?;
    if let Some(l) = &a.labels {
        run.input(l)?;
    }
    let names = FactorNames::load(a.labels.as_deref(), grouping.as_ref())?;
    let missing: Vec<String> = a.token.iter().filter(|t| es.vocab().get(t).is_none()).cloned().collect();
    match missing.len() {
        0 => {}
        1 => return Err(Error::UnknownToken(missing[0].clone())),
        _ => return Err(Error::UnknownTokens(missing)),
    }
    let mut all = Vec::new();
    for t in &a.token {
        let d = analysis::decompose_word(&codes, &es, &names, t, a.top, a.normalized)?;
        let safe: String = t.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        analysis::write_decomposition_csv(&d, run.path(&format!("decompose-{safe}.csv")))?;
        let line: Vec<String> = d
            .terms
            .iter()
            .map(|term| {
                let label = term.name.clone().unwrap_or_else(|| format!("#{}", term.factor_id));
                format!("{:.3} {label}", term.coefficient)
            })
            .chain([format!("{:.3} others", d.residual_mass)])
            .collect();
        println!("{t} = {}", line.join(" + "));
        all.push(d);
    }
    run.json("decompositions.json", &all)?;
    if a.pca {
        let points = analysis::pca_project(&es, &a.token)?;
        analysis::write_projection_csv(&points, run.path("pca.csv"))?;
        run.text("pca.svg", &svg::scatter("PCA", &points))?;
    }
    Ok(())
}

fn cmd_manipulate(a: &ManipulateArgs, run: &mut Run<'_>) -> Result<()> {
    let es = run.embeddings(&a.emb)?;
    let ckpt = run.checkpoint(&a.dictionary)?;
    let metric: Metric = a.metric.parse()?;
    let edits = a.edit.iter().map(|e| analysis::parse_edit(e)).collect::<Result<Vec<_>>>()?;
    let ranked = analysis::manipulate(&es, &ckpt.dict, &a.token, &edits, metric, a.exclude_self, a.k)?;
    for (i, r) in ranked.iter().enumerate() {
        println!("{:>3}  {:<24} {:.4}", i + 1, r.token, r.score);
    }
    analysis::write_neighbors_csv(&ranked, run.path("neighbors.csv"))?;
    run.json("neighbors.json", &ranked)
}

fn cmd_analogy(a: &AnalogyArgs, run: &mut Run<'_>) -> Result<()> {
    if a.questions.is_none() && a.pairs_factor.is_none() {
        return Err(Error::InvalidArgument("give --questions and/or --pairs-factor".into()));
    }
    let es = run.embeddings(&a.emb)?;
    let codes = a.codes.as_deref().map(|p| run.codes(p, &es)).transpose()?;
    let grouping = a.groups.as_deref().map(|p| run.grouping(p, None)).transpose()?;

    if let Some(factor) = a.pairs_factor {
        let dict_path = a.dictionary.as_deref().expect("clap enforces --dictionary");
        let ckpt = run.checkpoint(dict_path)?;
        let codes = codes.as_ref().expect("clap enforces --codes");
        let pairs = analogy::generate_pairs(&es, &ckpt.dict, codes, factor, a.coef, a.max_pairs)?;
        let text: String = pairs.iter().map(|(b, d)| format!("{b}\t{d}\n")).collect();
        run.text("pairs.tsv", &text)?;
        let task = analogy::task_from_pairs(&format!("factor-{factor}"), &pairs);
        analogy::write_questions(&[task], run.path("pairs-questions.txt"))?;
        eprintln!("{} pairs for factor {factor}", pairs.len());
    }

    let Some(qpath) = &a.questions else {
        return Ok(());
    };
    run.input(qpath)?;
    let tasks = load_questions(qpath, a.lowercase)?;

    if let (Some(top), Some(codes), Some(grouping)) = (a.suggest_bindings, &codes, &grouping) {
        let mut text = String::from("# suggested bindings (task, group, overlap); review before use\n");
        for t in &tasks {
            if let Some((g, overlap)) = suggest_binding(t, &es, codes, grouping, top)? {
                text.push_str(&format!("{}\t{g}\t{overlap}\n", t.name));
            }
        }
        run.text("suggested_bindings.tsv", &text)?;
    }

    let arith = evaluate(&es, &tasks, &EvalMode::Arithmetic)?;
    let mut reports = serde_json::Map::new();
    reports.insert("arithmetic".into(), serde_json::to_value(&arith).map_err(|e| Error::Numeric(e.to_string()))?);
    let grouped = match (&a.bindings, &codes, &grouping) {
        (Some(bpath), Some(codes), Some(grouping)) => {
            run.input(bpath)?;
            let bindings = read_bindings(bpath)?;
            let mode = EvalMode::Grouped { codes, grouping, bindings: &bindings, horizon: a.horizon };
            Some(evaluate(&es, &tasks, &mode)?)
        }
        _ => None,
    };
    let table = match &grouped {
        Some(g) => {
            reports.insert("grouped".into(), serde_json::to_value(g).map_err(|e| Error::Numeric(e.to_string()))?);
            compare_table(&[&arith, g])
        }
        None => compare_table(&[&arith]),
    };
    print!("{table}");
    run.text("report.txt", &table)?;
    run.json("report.json", &reports)
}

fn cmd_report(a: &ReportArgs, run: &mut Run<'_>) -> Result<()> {
    let es = run.embeddings(&a.emb)?;
    let codes = run.codes(&a.codes, &es)?;
    let grouping = a.groups.as_deref().map(|p| run.grouping(p, None)).transpose()?;
    if let Some(l) = &a.labels {
        run.input(l)?;
    }
    let names = FactorNames::load(a.labels.as_deref(), grouping.as_ref())?;

    let mut profiles = analysis::factor_profiles(&codes, &es, a.mass)?;
    profile_names(&mut profiles, &names.factors);
    analysis::write_profiles_csv(&profiles, run.path("factors.csv"))?;
    let mut listing = String::from("factor\tname\tflag\ttop words\n");
    for p in &profiles {
        let words: Vec<&str> = p.top_words.iter().map(|e| e.token.as_str()).collect();
        listing.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.factor_id,
            p.suggested_name.as_deref().unwrap_or(""),
            if p.unidentifiable { "unclear" } else { "" },
            words.join(", ")
        ));
    }
    run.text("factors.tsv", &listing)?;
    if let Some(g) = &grouping {
        let mut text = String::from("group\tlabel\tfactors\n");
        for id in 0..g.k_clusters {
            let members: Vec<String> = g.members(id).iter().map(|f| f.to_string()).collect();
            text.push_str(&format!("{id}\t{}\t{}\n", g.label(id).unwrap_or(""), members.join(",")));
        }
        run.text("groups.tsv", &text)?;
    }

    let mut decomps = Vec::new();
    let mut unknown = Vec::new();
    let mut text = String::new();
    for w in &a.words {
        match analysis::decompose_word(&codes, &es, &names, w, analysis::DEFAULT_DECOMPOSE_TOP, true) {
            Ok(d) => {
                let terms: Vec<String> = d
                    .terms
                    .iter()
                    .map(|t| format!("{:.2} {}", t.coefficient, t.name.clone().unwrap_or_else(|| format!("#{}", t.factor_id))))
                    .collect();
                text.push_str(&format!("{w} = {} + {:.2} others\n", terms.join(" + "), d.residual_mass));
                decomps.push(d);
            }
            Err(Error::UnknownToken(t)) => unknown.push(t),
            Err(e) => return Err(e),
        }
    }
    warn_unknown(&unknown);
    if !a.words.is_empty() {
        run.text("decompositions.txt", &text)?;
        run.json("decompositions.json", &decomps)?;
    }

    if let Some(qpath) = &a.questions {
        run.input(qpath)?;
        let tasks = load_questions(qpath, a.lowercase)?;
        let arith = evaluate(&es, &tasks, &EvalMode::Arithmetic)?;
        let mut reports = vec![arith];
        if let (Some(bpath), Some(grouping)) = (&a.bindings, &grouping) {
            run.input(bpath)?;
            let bindings = read_bindings(bpath)?;
            let mode = EvalMode::Grouped { codes: &codes, grouping, bindings: &bindings, horizon: analogy::DEFAULT_HORIZON };
            reports.push(evaluate(&es, &tasks, &mode)?);
        }
        let refs: Vec<&analogy::EvalReport> = reports.iter().collect();
        run.text("analogy.txt", &compare_table(&refs))?;
        run.json("analogy.json", &reports)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = Cli::try_parse_from([
            "wordfactors", "manipulate", "--embeddings", "e.txt", "--dictionary", "d.wfdl", "--token", "good",
            "--edit", "3:-4", "--seed", "7", "--out", "o",
        ])
        .unwrap();
        assert_eq!(cli.seed, 7);
        assert_eq!(cli.out, PathBuf::from("o"));
        let Command::Manipulate(m) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(m.edit, vec!["3:-4".to_string()]);
    }

    #[test]
    fn digests_match_known_value() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, b"abc").unwrap();
        let d = digest_file(&p).unwrap();
        assert_eq!(d.bytes, 3);
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
