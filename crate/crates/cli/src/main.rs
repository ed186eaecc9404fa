//! Command-line driver: featurize molecule CSVs, train and evaluate the
//! attention models and the GCN baseline, run the gradient-check suite, the
//! ring-membership experiment, and generate synthetic datasets.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pagtn_core::autodiff::{AdamConfig, Tape};
use pagtn_core::checkpoint::{
    load_checkpoint, save_checkpoint, write_features, Checkpoint, MoleculeFeatures,
};
use pagtn_core::corpus;
use pagtn_core::gradcheck;
use pagtn_core::model::{forward, Model, ModelConfig, ModelInput, ModelKind};
use pagtn_core::molgraph::prepare;
use pagtn_core::ring_task::{self, RingTaskConfig};
use pagtn_core::training::{
    self, evaluate, load_csv, make_folds, Metric, TaskKind, TaskSpec, TrainConfig, TrainError,
};

#[derive(Parser)]
#[command(
    name = "pagtn",
    about = "Molecular property prediction with path-augmented graph attention",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a SMILES CSV and write node/path feature tensors to a binary container
    Featurize(FeaturizeArgs),
    /// Train a model over one or more folds and report the test metric
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a labeled CSV
    Eval(EvalArgs),
    /// Run the finite-difference gradient-check suite
    Gradcheck(GradcheckArgs),
    /// Ring co-membership experiment: train a pairwise classifier on a backbone
    Ringtask(RingtaskArgs),
    /// Generate synthetic molecule datasets
    GenData(GenDataArgs),
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Input CSV with a SMILES column
    #[arg(long)]
    input: PathBuf,
    /// Name of the SMILES column
    #[arg(long, default_value = "smiles")]
    smiles_col: String,
    /// Path-feature truncation distance
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Output container path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// Model: pagtn (global attention), pagtn-local, or gcn
    #[arg(long, default_value = "pagtn")]
    model: String,
    #[arg(long, default_value_t = 5)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Path truncation distance (also the local attention radius)
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// LeakyReLU slope in the attention scores
    #[arg(long, default_value_t = 0.2)]
    leaky_slope: f64,
    /// Enable post-layer normalization
    #[arg(long, default_value_t = false)]
    layer_norm: bool,
}

impl ModelFlags {
    fn kind(&self) -> Result<ModelKind, AppError> {
        ModelKind::parse(&self.model)
            .ok_or_else(|| AppError::usage(format!("unknown model '{}'", self.model)))
    }

    fn config(&self) -> Result<ModelConfig, AppError> {
        let config = ModelConfig {
            layers: self.layers,
            heads: self.heads,
            dim: self.dim,
            d: self.d,
            leaky_slope: self.leaky_slope,
            layer_norm: self.layer_norm,
        };
        config.validate().map_err(AppError::usage)?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "smiles")]
    smiles_col: String,
    /// Target column; repeat for multi-target tasks
    #[arg(long = "target-col", required = true)]
    target_cols: Vec<String>,
    /// Task: reg (regression) or clf (classification)
    #[arg(long, default_value = "reg")]
    task: String,
    /// Metric: mae, rmse, or auc
    #[arg(long, default_value = "rmse")]
    metric: String,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of folds to train and average over
    #[arg(long, default_value_t = 1)]
    folds: usize,
    /// Dataset name printed in the metric row (defaults to the file stem)
    #[arg(long)]
    name: Option<String>,
    /// Save the best checkpoint here (fold index inserted when folds > 1)
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Dump attention matrices for the first test molecule to this path
    #[arg(long)]
    debug_attention: Option<PathBuf>,
    /// Disable target z-scoring
    #[arg(long, default_value_t = false)]
    no_normalize: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "smiles")]
    smiles_col: String,
    #[arg(long = "target-col", required = true)]
    target_cols: Vec<String>,
    /// Metric override; defaults to rmse for regression, auc for classification
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct RingtaskArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "smiles")]
    smiles_col: String,
    /// Backbone: pagtn or gcn
    #[arg(long, default_value = "pagtn")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Export the generated pairs as CSV for audit
    #[arg(long)]
    pairs_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Corpus kind: ring, regression, or chains
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian noise on the regression target
    #[arg(long, default_value_t = 0.4)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Error with the exit code it maps to.
struct AppError {
    code: u8,
    message: String,
}

impl AppError {
    fn usage(message: impl Into<String>) -> AppError {
        AppError {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> AppError {
        AppError {
            code: 2,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> AppError {
        AppError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<TrainError> for AppError {
    fn from(e: TrainError) -> AppError {
        match e {
            TrainError::Diverged { .. } => AppError::numerical(e.to_string()),
            TrainError::IncompatibleMetric { .. } | TrainError::NoTargets => {
                AppError::usage(e.to_string())
            }
            other => AppError::data(other.to_string()),
        }
    }
}

impl From<pagtn_core::checkpoint::CheckpointError> for AppError {
    fn from(e: pagtn_core::checkpoint::CheckpointError) -> AppError {
        AppError::data(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> AppError {
        AppError::data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Featurize(args) => cmd_featurize(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Ringtask(args) => cmd_ringtask(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Read just the SMILES column of a CSV.
fn read_smiles_column(path: &Path, smiles_col: &str) -> Result<Vec<String>, AppError> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| AppError::data(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| AppError::data(e.to_string()))?
        .clone();
    let idx = headers
        .iter()
        .position(|h| h == smiles_col)
        .ok_or_else(|| AppError::data(format!("column '{smiles_col}' not found")))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AppError::data(e.to_string()))?;
        if let Some(s) = record.get(idx) {
            let s = s.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
        }
    }
    if out.is_empty() {
        return Err(AppError::data("no rows in input"));
    }
    Ok(out)
}

fn cmd_featurize(args: FeaturizeArgs) -> Result<(), AppError> {
    if args.d == 0 {
        return Err(AppError::usage("--d must be at least 1"));
    }
    let smiles = read_smiles_column(&args.input, &args.smiles_col)?;
    let mut features = Vec::new();
    let mut failures = 0usize;
    for (row, s) in smiles.iter().enumerate() {
        match prepare(s, args.d) {
            Ok(prep) => features.push(MoleculeFeatures {
                n: prep.graph.n_atoms() as u32,
                node: prep.node_feats.clone(),
                path: prep.path.as_matrix(),
            }),
            Err(e) => {
                eprintln!("row {row}: failed to parse '{s}': {e}");
                failures += 1;
            }
        }
    }
    if features.is_empty() {
        return Err(AppError::data(format!(
            "all {failures} rows failed to featurize"
        )));
    }
    write_features(&args.out, &features)?;
    eprintln!(
        "wrote {} molecules to {} ({} rows skipped)",
        features.len(),
        args.out.display(),
        failures
    );
    Ok(())
}

fn parse_task(task: &str) -> Result<TaskKind, AppError> {
    match task {
        "reg" | "regression" => Ok(TaskKind::Regression),
        "clf" | "classification" => Ok(TaskKind::Classification),
        other => Err(AppError::usage(format!("unknown task '{other}'"))),
    }
}

fn parse_metric(metric: &str) -> Result<Metric, AppError> {
    Metric::parse(metric).ok_or_else(|| AppError::usage(format!("unknown metric '{metric}'")))
}

fn checkpoint_path_for_fold(base: &Path, fold: usize, n_folds: usize) -> PathBuf {
    if n_folds == 1 {
        return base.to_path_buf();
    }
    match base.extension() {
        Some(ext) => {
            let stem = base.file_stem().unwrap_or_default().to_string_lossy();
            base.with_file_name(format!("{stem}.fold{fold}.{}", ext.to_string_lossy()))
        }
        None => base.with_file_name(format!(
            "{}.fold{fold}",
            base.file_name().unwrap_or_default().to_string_lossy()
        )),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), AppError> {
    let kind = args.model.kind()?;
    let model_config = args.model.config()?;
    let task_kind = parse_task(&args.task)?;
    let metric = parse_metric(&args.metric)?;
    let task = TaskSpec::new(
        task_kind,
        metric,
        args.target_cols.len(),
        !args.no_normalize,
    )?;

    let dataset = load_csv(&args.input, &args.smiles_col, &args.target_cols)?;
    if dataset.skipped > 0 {
        eprintln!("skipped {} unusable rows", dataset.skipped);
    }
    let folds = make_folds(dataset.len(), args.folds, args.seed)?;
    let inputs = training::featurize_dataset(&dataset, model_config.d);

    let train_config = TrainConfig {
        kind,
        model: model_config,
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        batch_size: args.batch,
        epochs: args.epochs,
        patience: args.patience,
        seed: args.seed,
    };

    let mut fold_metrics = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let outcome = training::train_with_inputs(&dataset, &inputs, &task, &train_config, fold)?;
        for rec in &outcome.history {
            eprintln!(
                "fold={f} epoch={} train_loss={:.6} valid={:.6}",
                rec.epoch, rec.train_loss, rec.valid_metric
            );
        }
        eprintln!(
            "fold={f} test_{}={:.6} (best epoch {}, valid {:.6})",
            metric.as_str(),
            outcome.test_metric,
            outcome.best_epoch,
            outcome.best_valid
        );
        fold_metrics.push(outcome.test_metric);

        if let Some(base) = &args.checkpoint_out {
            let path = checkpoint_path_for_fold(base, f, folds.len());
            let ckpt = Checkpoint {
                model: outcome.model.clone(),
                task_kind,
                norm: outcome.norm.clone(),
                seed: args.seed,
            };
            save_checkpoint(&path, &ckpt)?;
            eprintln!("fold={f} checkpoint saved to {}", path.display());
        }
        if f == 0 {
            if let Some(dump) = &args.debug_attention {
                let mol = fold.test.first().copied().unwrap_or(0);
                dump_attention(dump, &outcome.model, &inputs[mol], mol)?;
            }
        }
    }

    let n = fold_metrics.len() as f64;
    let mean = fold_metrics.iter().sum::<f64>() / n;
    let std = (fold_metrics
        .iter()
        .map(|m| (m - mean) * (m - mean))
        .sum::<f64>()
        / n)
        .sqrt();
    let name = args.name.unwrap_or_else(|| {
        args.input
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "dataset".to_string())
    });
    println!("{name}  {}  {mean:.3} ± {std:.3}", metric.as_str());
    Ok(())
}

/// Write attention matrices of one molecule, one block per layer/head.
fn dump_attention(
    path: &Path,
    model: &Model,
    input: &ModelInput,
    molecule_index: usize,
) -> Result<(), AppError> {
    use std::io::Write;
    let mut tape = Tape::new();
    let (res, _) = forward(&mut tape, model, input);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "molecule {molecule_index} n {}", input.n)?;
    for rec in &res.alphas {
        writeln!(f, "layer {} head {}", rec.layer, rec.head)?;
        for i in 0..rec.alpha.rows {
            let row: Vec<String> = rec.alpha.row(i).iter().map(|v| format!("{v:.6}")).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), AppError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let dataset = load_csv(&args.input, &args.smiles_col, &args.target_cols)?;
    if dataset.n_targets != ckpt.model.n_targets {
        return Err(AppError::data(format!(
            "checkpoint predicts {} targets but {} target columns given",
            ckpt.model.n_targets, dataset.n_targets
        )));
    }
    let metric = match &args.metric {
        Some(m) => parse_metric(m)?,
        None => match ckpt.task_kind {
            TaskKind::Regression => Metric::Rmse,
            TaskKind::Classification => Metric::Auc,
        },
    };
    let inputs = training::featurize_dataset(&dataset, ckpt.model.config.d);
    // layout compatibility: featurization width must match the checkpoint
    if inputs[0].x.cols != ckpt.model.n_node_features
        || inputs[0].p.cols != ckpt.model.n_path_features
    {
        return Err(AppError::data(format!(
            "incompatible feature layout: checkpoint expects F_n={} F_p={}, input gives F_n={} F_p={}",
            ckpt.model.n_node_features,
            ckpt.model.n_path_features,
            inputs[0].x.cols,
            inputs[0].p.cols
        )));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let value = evaluate(&ckpt.model, &inputs, &dataset, &idx, &ckpt.norm, metric)?;
    println!("{}  {value:.6}", metric.as_str());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), AppError> {
    let reports = gradcheck::run_full_suite(args.seed);
    let mut all_pass = true;
    let mut worst: f64 = 0.0;
    for r in &reports {
        println!(
            "{:<20} {:>4} cases  max rel err {:.3e}  {}",
            r.name,
            r.cases,
            r.max_rel_err,
            if r.pass { "ok" } else { "FAIL" }
        );
        all_pass &= r.pass;
        worst = worst.max(r.max_rel_err);
    }
    println!("max rel err overall {worst:.3e}");
    if all_pass {
        Ok(())
    } else {
        Err(AppError::numerical("gradient check failed"))
    }
}

fn cmd_ringtask(args: RingtaskArgs) -> Result<(), AppError> {
    let kind = ModelKind::parse(&args.model)
        .ok_or_else(|| AppError::usage(format!("unknown model '{}'", args.model)))?;
    let molecules = read_smiles_column(&args.input, &args.smiles_col)?;
    let dataset = ring_task::generate_ring_dataset(&molecules, args.seed)
        .map_err(|e| AppError::data(e.to_string()))?;
    if dataset.skipped > 0 {
        eprintln!(
            "{} molecules lacked two perceived rings or failed to parse",
            dataset.skipped
        );
    }
    if let Some(out) = &args.pairs_out {
        ring_task::export_pairs_csv(out, &dataset)?;
        eprintln!("pairs exported to {}", out.display());
    }
    let cfg = RingTaskConfig {
        model: ModelConfig {
            layers: args.layers,
            dim: args.dim,
            d: args.d,
            ..ModelConfig::default()
        },
        adam: AdamConfig {
            lr: args.lr,
            ..AdamConfig::default()
        },
        epochs: args.epochs,
        seed: args.seed,
        ..RingTaskConfig::default()
    };
    let outcome = ring_task::train_pair_classifier(kind, &molecules, &dataset, &cfg)
        .map_err(|e| AppError::data(e.to_string()))?;
    println!(
        "ringtask  {}  accuracy {:.3}  auc {:.3}  ({} molecules, {} test pairs)",
        kind.as_str(),
        outcome.accuracy,
        outcome.auc,
        outcome.n_molecules,
        outcome.n_test_pairs
    );
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), AppError> {
    use std::io::Write;
    match args.kind.as_str() {
        "ring" => {
            let molecules = corpus::ring_corpus(args.count, args.seed);
            let mut f = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
            writeln!(f, "smiles")?;
            for m in &molecules {
                writeln!(f, "{m}")?;
            }
        }
        "regression" => {
            let rows = corpus::regression_corpus(args.count, args.seed, args.noise);
            corpus::write_csv(&args.out, &rows)?;
        }
        "chains" => {
            let molecules = corpus::chain_corpus(args.count, args.seed);
            let mut f = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
            writeln!(f, "smiles")?;
            for m in &molecules {
                writeln!(f, "{m}")?;
            }
        }
        other => return Err(AppError::usage(format!("unknown corpus kind '{other}'"))),
    }
    eprintln!("wrote {} rows to {}", args.count, args.out.display());
    Ok(())
}
