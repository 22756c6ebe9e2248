use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nspgnn_core::attack::{self, AttackConfig, AttackMode};
use nspgnn_core::experiment::{run_experiment, ExperimentConfig};
use nspgnn_core::io::{self, DatasetPaths};
use nspgnn_core::knn::build_dual_knn_with;
use nspgnn_core::model::{forward, nsp_sanitize, ModelInputs, SanitizePolicy, Variant};
use nspgnn_core::similarity::separation_report;
use nspgnn_core::synthetic::{generate_synthetic, SyntheticSpec};
use nspgnn_core::train::{accuracy, train, TrainConfig};
use nspgnn_core::{Dataset, Error, Graph};

#[derive(Parser)]
#[command(
    name = "nspgnn",
    version,
    about = "Robust node classification and structural attack toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Load a dataset and print its statistics.
    LoadCheck(DataArgs),
    /// Poison a dataset's graph.
    Attack(AttackArgs),
    /// Similarity separation between benign and malicious links.
    Analyze(AnalyzeArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Evaluate(EvaluateArgs),
    /// Drop the edges with the lowest neighbor similarity.
    Sanitize(SanitizeArgs),
    /// Run a full experiment from a JSON config.
    Experiment(ExperimentArgs),
    /// Write the dual kNN graphs as edge lists.
    ExportKnn(ExportKnnArgs),
    /// Write per-power link score CSVs.
    ExportDensity(AnalyzeArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding edges.tsv, features.csv, labels.csv and optionally split.json.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Seed of the default split when no split file is given.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl DataArgs {
    fn paths(&self) -> Result<DatasetPaths, CliError> {
        let pick = |explicit: &Option<PathBuf>, name: &str| -> Result<PathBuf, CliError> {
            match (explicit, &self.data) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(dir)) => Ok(dir.join(name)),
                (None, None) => Err(CliError::Usage(format!(
                    "--{} or --data is required",
                    name.split('.').next().unwrap_or(name)
                ))),
            }
        };
        let split = match (&self.split, &self.data) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(dir)) if dir.join("split.json").exists() => Some(dir.join("split.json")),
            _ => None,
        };
        Ok(DatasetPaths {
            edges: pick(&self.edges, "edges.tsv")?,
            features: pick(&self.features, "features.csv")?,
            labels: pick(&self.labels, "labels.csv")?,
            split,
        })
    }

    fn load(&self) -> Result<Dataset, CliError> {
        Ok(io::load_dataset(&self.paths()?, self.split_seed)?)
    }

    /// The dataset, with its graph replaced by `poisoned` when given.
    fn load_with(&self, poisoned: Option<&Path>) -> Result<(Dataset, Option<Graph>), CliError> {
        let ds = self.load()?;
        match poisoned {
            Some(p) => {
                let g = Graph::from_edges(&io::read_edge_list(p)?, ds.n_nodes())?;
                let clean = ds.graph.clone();
                Ok((ds.with_graph(g)?, Some(clean)))
            }
            None => Ok((ds, None)),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON file with a full generator spec; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    degree: Option<f64>,
    #[arg(long)]
    homophily: Option<f64>,
    #[arg(long = "n-features")]
    n_features: Option<usize>,
    #[arg(long)]
    sep: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackMethodArg {
    Gradient,
    BruteForce,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Flip,
    AddOnly,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = AttackMethodArg::Gradient)]
    method: AttackMethodArg,
    /// Fraction of edges to flip.
    #[arg(long, default_value_t = 0.05)]
    budget: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Flip)]
    mode: ModeArg,
    #[arg(long, default_value_t = 2)]
    surrogate_tau: usize,
    #[arg(long)]
    candidate_cap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for poisoned_edges.tsv and attack_report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Poisoned edge list to compare against the clean graph.
    #[arg(long)]
    poisoned: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0usize, 1, 2, 3, 5, 10])]
    taus: Vec<usize>,
    /// Directory for density CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Nspgnn,
    NspgnnWo,
    Gcn,
    Sgc,
}

impl VariantArg {
    fn variant(self) -> Variant {
        match self {
            VariantArg::Nspgnn => Variant::Nspgnn,
            VariantArg::NspgnnWo => Variant::NspgnnWo,
            VariantArg::Gcn => Variant::Gcn,
            VariantArg::Sgc => Variant::Sgc,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Train on this edge list instead of the dataset's graph.
    #[arg(long)]
    poisoned: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Nspgnn)]
    variant: VariantArg,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    k1: usize,
    #[arg(long, default_value_t = 10)]
    k2: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![64usize])]
    hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2])]
    taus: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    sgc_tau: usize,
    /// Where to write the best-validation checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where to write per-epoch curves and metrics as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    poisoned: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct SanitizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    poisoned: Option<PathBuf>,
    #[arg(long, conflicts_with = "threshold")]
    keep_fraction: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2])]
    taus: Vec<usize>,
    /// Output edge list.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExportKnnArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    poisoned: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k1: usize,
    #[arg(long, default_value_t = 10)]
    k2: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2])]
    taus: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::InvalidConfig(_)) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out).expect("serializable output");
            // A closed stdout (e.g. piped into `head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> Result<Value, CliError> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::LoadCheck(a) => Ok(serde_json::to_value(a.load()?.stats())?),
        Command::Attack(a) => run_attack(a),
        Command::Analyze(a) => analyze(a, false),
        Command::ExportDensity(a) => analyze(a, true),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sanitize(a) => sanitize(a),
        Command::Experiment(a) => experiment(a),
        Command::ExportKnn(a) => export_knn(a),
    }
}

fn generate(a: GenerateArgs) -> Result<Value, CliError> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => io::read_json(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = a.nodes {
        spec.n_nodes = v;
    }
    if let Some(v) = a.classes {
        spec.n_classes = v;
    }
    if let Some(v) = a.degree {
        spec.mean_degree = v;
    }
    if let Some(v) = a.homophily {
        spec.homophily = v;
    }
    if let Some(v) = a.n_features {
        spec.n_features = v;
    }
    if let Some(v) = a.sep {
        spec.class_sep = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    let ds = generate_synthetic(&spec)?;
    io::save_dataset(&a.out, &ds)?;
    io::write_json(&a.out.join("spec.json"), &spec)?;
    Ok(json!({ "spec": spec, "stats": ds.stats() }))
}

fn run_attack(a: AttackArgs) -> Result<Value, CliError> {
    let ds = a.data.load()?;
    let cfg = AttackConfig {
        budget_fraction: a.budget,
        mode: match a.mode {
            ModeArg::Flip => AttackMode::Flip,
            ModeArg::AddOnly => AttackMode::AddOnly,
        },
        surrogate_tau: a.surrogate_tau,
        candidate_cap: a.candidate_cap,
        seed: a.seed,
        ..AttackConfig::default()
    };
    let report = match a.method {
        AttackMethodArg::Gradient => attack::gradient_attack(&ds, &cfg)?,
        AttackMethodArg::BruteForce => attack::brute_force_attack(&ds, &cfg)?,
        AttackMethodArg::Random => attack::random_attack(&ds, &cfg)?,
    };
    let poisoned = report
        .poisoned
        .as_ref()
        .expect("attacks return the poisoned graph");
    io::write_edge_list(&a.out.join("poisoned_edges.tsv"), poisoned.edges())?;
    io::write_json(&a.out.join("attack_report.json"), &report)?;
    Ok(json!({
        "method": report.method,
        "budget": report.budget,
        "n_flips": report.flips.len(),
        "clean_loss": report.clean_loss,
        "poisoned_loss": report.poisoned_loss,
        "correlation": report.correlation,
    }))
}

fn analyze(a: AnalyzeArgs, require_out: bool) -> Result<Value, CliError> {
    let (ds, clean) = a.data.load_with(Some(&a.poisoned))?;
    let clean = clean.expect("poisoned graph given");
    let report = separation_report(&clean, &ds.graph, &ds.features.view(), &a.taus)?;
    let files = match (&a.out, require_out) {
        (Some(dir), _) => io::emit_density(&report.scores, dir)?,
        (None, true) => return Err(CliError::Usage("--out is required".into())),
        (None, false) => Vec::new(),
    };
    Ok(json!({ "separation": report.rows, "files": files }))
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        variant: a.variant.variant(),
        lr: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        k1: a.k1,
        k2: a.k2,
        hidden: a.hidden.clone(),
        taus: a.taus.clone(),
        sgc_tau: a.sgc_tau,
    }
}

fn run_train(a: TrainArgs) -> Result<Value, CliError> {
    let (ds, _) = a.data.load_with(a.poisoned.as_deref())?;
    let cfg = train_config(&a);
    cfg.validate()?;
    let dual = if cfg.variant.needs_dual() {
        Some(build_dual_knn_with(
            &ds.graph,
            &ds.features.view(),
            cfg.k1,
            cfg.k2,
            &cfg.taus,
        )?)
    } else {
        None
    };
    let r = train(&ds, dual.as_ref(), &cfg)?;
    if let Some(path) = &a.checkpoint {
        io::write_checkpoint(path, &r.best_params, cfg.seed, serde_json::to_value(&cfg)?)?;
    }
    let summary = json!({
        "variant": cfg.variant,
        "best_epoch": r.best_epoch,
        "best_val_acc": r.best_val_acc,
        "test_acc": r.test_acc,
        "final_train_loss": r.train_loss.last(),
        "loss_spikes": r.loss_spikes,
        "wall_clock_s": r.wall_clock_s,
    });
    if let Some(path) = &a.out {
        let full = json!({
            "version": nspgnn_core::experiment::VERSION,
            "config": cfg,
            "dataset": ds.stats(),
            "metrics": summary,
            "train_loss": r.train_loss,
            "val_acc": r.val_acc,
        });
        io::write_json(path, &full)?;
    }
    Ok(summary)
}

fn evaluate(a: EvaluateArgs) -> Result<Value, CliError> {
    let (ds, _) = a.data.load_with(a.poisoned.as_deref())?;
    let (header, params) = io::read_checkpoint(&a.checkpoint)?;
    let cfg: TrainConfig = serde_json::from_value(header.extra.clone())
        .map_err(|e| Error::InvalidData(format!("checkpoint header: {e}")))?;
    let dual = if params.variant.needs_dual() {
        Some(build_dual_knn_with(
            &ds.graph,
            &ds.features.view(),
            cfg.k1,
            cfg.k2,
            &cfg.taus,
        )?)
    } else {
        None
    };
    let inputs = ModelInputs::new(params.variant, &ds, dual.as_ref(), cfg.sgc_tau)?;
    let (probs, _) = forward(&params, &inputs)?;
    let labels = ds.labels.as_slice();
    let acc = |mask: &[bool]| accuracy(&probs, labels, mask).ok();
    Ok(json!({
        "variant": params.variant,
        "train_acc": acc(&ds.split.train),
        "val_acc": acc(&ds.split.val),
        "test_acc": acc(&ds.split.test),
    }))
}

fn sanitize(a: SanitizeArgs) -> Result<Value, CliError> {
    let (ds, _) = a.data.load_with(a.poisoned.as_deref())?;
    let policy = match (a.keep_fraction, a.threshold) {
        (Some(f), None) => SanitizePolicy::KeepFraction(f),
        (None, Some(t)) => SanitizePolicy::Threshold(t),
        _ => {
            return Err(CliError::Usage(
                "give exactly one of --keep-fraction or --threshold".into(),
            ))
        }
    };
    let g = nsp_sanitize(&ds.graph, &ds.features.view(), policy, &a.taus)?;
    io::write_edge_list(&a.out, g.edges())?;
    Ok(json!({ "n_edges_before": ds.graph.n_edges(), "n_edges_after": g.n_edges() }))
}

fn experiment(a: ExperimentArgs) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::Io {
        path: a.config.clone(),
        source: e,
    })?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if a.output_dir.is_some() {
        cfg.output_dir = a.output_dir;
    }
    let results = run_experiment(&cfg)?;
    let failed = results.cells.iter().filter(|c| c.error.is_some()).count();
    Ok(json!({
        "summary": results.summary,
        "kl_table": results.kl_table,
        "n_cells": results.cells.len(),
        "n_failed_cells": failed,
        "output_dir": cfg.output_dir,
    }))
}

fn export_knn(a: ExportKnnArgs) -> Result<Value, CliError> {
    let (ds, _) = a.data.load_with(a.poisoned.as_deref())?;
    let dual = build_dual_knn_with(&ds.graph, &ds.features.view(), a.k1, a.k2, &a.taus)?;
    let files = io::export_knn(&dual, &a.out)?;
    Ok(json!({ "files": files }))
}
