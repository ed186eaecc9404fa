//! Dataset ingestion, fold splitting, metrics, and the training loop.
//!
//! Folds shuffle with the crate's documented PRNG seeded at
//! `base_seed + fold`, then slice 80:10:10. Regression targets are
//! z-scored on the train split only (statistics travel with the model so
//! evaluation de-normalizes); the test metric is computed exactly once, on
//! the parameters with the best validation metric.

use std::path::Path;

use thiserror::Error;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::model::{forward, Model, ModelConfig, ModelInput, ModelKind};
use crate::molgraph::prepare;
use crate::rng::SplitMix64;
use crate::smiles::parse_smiles;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mae,
    Rmse,
    Auc,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Auc => "auc",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        match s {
            "mae" => Some(Metric::Mae),
            "rmse" => Some(Metric::Rmse),
            "auc" => Some(Metric::Auc),
            _ => None,
        }
    }

    pub fn lower_is_better(&self) -> bool {
        !matches!(self, Metric::Auc)
    }
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub metric: Metric,
    pub n_targets: usize,
    pub normalize_targets: bool,
}

impl TaskSpec {
    pub fn new(
        kind: TaskKind,
        metric: Metric,
        n_targets: usize,
        normalize_targets: bool,
    ) -> Result<TaskSpec, TrainError> {
        let compatible = match metric {
            Metric::Auc => kind == TaskKind::Classification,
            Metric::Mae | Metric::Rmse => kind == TaskKind::Regression,
        };
        if !compatible {
            return Err(TrainError::IncompatibleMetric {
                metric: metric.as_str(),
            });
        }
        if n_targets == 0 {
            return Err(TrainError::NoTargets);
        }
        Ok(TaskSpec {
            kind,
            metric,
            n_targets,
            normalize_targets,
        })
    }
}

/// One labeled molecule; `NaN` marks a missing target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub smiles: String,
    pub targets: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_targets: usize,
    /// Rows dropped during loading (bad SMILES, bad numbers, all-missing).
    pub skipped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column '{0}' not found in CSV header")]
    MissingColumn(String),
    #[error("no usable rows in input")]
    NoUsableRows,
    #[error("dataset of {0} samples is too small to split (need at least 10)")]
    DatasetTooSmall(usize),
    #[error("metric '{metric}' is incompatible with the task kind")]
    IncompatibleMetric { metric: &'static str },
    #[error("a task needs at least one target")]
    NoTargets,
    #[error("AUC needs both classes present")]
    SingleClassAuc,
    #[error("predictions and labels have different lengths or are empty")]
    LengthMismatch,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
}

/// Load a dataset from CSV (RFC 4180 quoting). Rows with unparseable SMILES
/// or numbers, or with every target missing, are skipped and counted.
pub fn load_csv(
    path: &Path,
    smiles_col: &str,
    target_cols: &[String],
) -> Result<Dataset, TrainError> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize, TrainError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TrainError::MissingColumn(name.to_string()))
    };
    let smiles_idx = find(smiles_col)?;
    let target_idx: Vec<usize> = target_cols
        .iter()
        .map(|c| find(c))
        .collect::<Result<_, _>>()?;

    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let record = record?;
        let smiles = record.get(smiles_idx).unwrap_or("").trim().to_string();
        if parse_smiles(&smiles).is_err() {
            skipped += 1;
            continue;
        }
        let mut targets = Vec::with_capacity(target_idx.len());
        let mut bad_number = false;
        for &ti in &target_idx {
            let raw = record.get(ti).unwrap_or("").trim();
            if raw.is_empty() {
                targets.push(f64::NAN);
            } else {
                match raw.parse::<f64>() {
                    Ok(v) => targets.push(v),
                    Err(_) => {
                        bad_number = true;
                        break;
                    }
                }
            }
        }
        if bad_number || targets.iter().all(|t| t.is_nan()) {
            skipped += 1;
            continue;
        }
        samples.push(Sample {
            smiles,
            targets,
            weight: 1.0,
        });
    }
    if samples.is_empty() {
        return Err(TrainError::NoUsableRows);
    }
    Ok(Dataset {
        samples,
        n_targets: target_cols.len(),
        skipped,
    })
}

/// Disjoint 80:10:10 index split.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub seed: u64,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold `f` shuffles `0..n` with `SplitMix64::new(base_seed + f)` and takes
/// `round(0.8 n)` train, `round(0.1 n)` validation, remainder test.
pub fn make_folds(n: usize, n_folds: usize, base_seed: u64) -> Result<Vec<FoldSplit>, TrainError> {
    if n < 10 {
        return Err(TrainError::DatasetTooSmall(n));
    }
    let mut folds = Vec::with_capacity(n_folds);
    for f in 0..n_folds {
        let seed = base_seed + f as u64;
        let mut rng = SplitMix64::new(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let n_train = ((n as f64) * 0.8).round() as usize;
        let n_valid = (((n as f64) * 0.1).round() as usize).max(1);
        let train = idx[..n_train].to_vec();
        let valid = idx[n_train..n_train + n_valid].to_vec();
        let test = idx[n_train + n_valid..].to_vec();
        if test.is_empty() {
            return Err(TrainError::EmptySplit("test"));
        }
        folds.push(FoldSplit {
            seed,
            train,
            valid,
            test,
        });
    }
    Ok(folds)
}

pub fn mae(predictions: &[f64], labels: &[f64]) -> f64 {
    let n = predictions.len() as f64;
    predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).abs())
        .sum::<f64>()
        / n
}

pub fn rmse(predictions: &[f64], labels: &[f64]) -> f64 {
    let n = predictions.len() as f64;
    (predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l) * (p - l))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Mann-Whitney AUC with tie correction (tied scores contribute 1/2 via
/// midranks). Labels above 0.5 count as positive.
pub fn auc(predictions: &[f64], labels: &[f64]) -> Result<f64, TrainError> {
    let n = predictions.len();
    let pos = labels.iter().filter(|&&l| l > 0.5).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(TrainError::SingleClassAuc);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| predictions[a].partial_cmp(&predictions[b]).unwrap());
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && predictions[order[j + 1]] == predictions[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            rank[o] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&k| labels[k] > 0.5).map(|k| rank[k]).sum();
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

pub fn compute_metric(
    metric: Metric,
    predictions: &[f64],
    labels: &[f64],
) -> Result<f64, TrainError> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(TrainError::LengthMismatch);
    }
    match metric {
        Metric::Mae => Ok(mae(predictions, labels)),
        Metric::Rmse => Ok(rmse(predictions, labels)),
        Metric::Auc => auc(predictions, labels),
    }
}

/// Per-target z-score statistics fitted on the train split only.
#[derive(Debug, Clone)]
pub struct TargetNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub enabled: bool,
}

impl TargetNorm {
    pub fn identity(n_targets: usize) -> TargetNorm {
        TargetNorm {
            mean: vec![0.0; n_targets],
            std: vec![1.0; n_targets],
            enabled: false,
        }
    }

    pub fn fit(dataset: &Dataset, train_idx: &[usize], n_targets: usize) -> TargetNorm {
        let mut mean = vec![0.0; n_targets];
        let mut count = vec![0usize; n_targets];
        for &i in train_idx {
            for (t, &v) in dataset.samples[i].targets.iter().enumerate() {
                if !v.is_nan() {
                    mean[t] += v;
                    count[t] += 1;
                }
            }
        }
        for t in 0..n_targets {
            if count[t] > 0 {
                mean[t] /= count[t] as f64;
            }
        }
        let mut var = vec![0.0; n_targets];
        for &i in train_idx {
            for (t, &v) in dataset.samples[i].targets.iter().enumerate() {
                if !v.is_nan() {
                    var[t] += (v - mean[t]) * (v - mean[t]);
                }
            }
        }
        let std = var
            .iter()
            .zip(&count)
            .map(|(&v, &c)| {
                if c > 1 {
                    (v / c as f64).sqrt().max(1e-12)
                } else {
                    1.0
                }
            })
            .collect();
        TargetNorm {
            mean,
            std,
            enabled: true,
        }
    }

    pub fn normalize(&self, target: usize, v: f64) -> f64 {
        if self.enabled {
            (v - self.mean[target]) / self.std[target]
        } else {
            v
        }
    }

    pub fn denormalize(&self, target: usize, v: f64) -> f64 {
        if self.enabled {
            v * self.std[target] + self.mean[target]
        } else {
            v
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stopping patience in epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::PagtnGlobal,
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 100,
            patience: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation metric.
    pub model: Model,
    pub norm: TargetNorm,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid: f64,
    /// Computed once, on the best-validation parameters.
    pub test_metric: f64,
}

fn better(metric: Metric, candidate: f64, incumbent: f64) -> bool {
    if metric.lower_is_better() {
        candidate < incumbent
    } else {
        candidate > incumbent
    }
}

/// De-normalized predictions for the listed samples, one row per sample.
pub fn predict_rows(
    model: &Model,
    inputs: &[ModelInput],
    idx: &[usize],
    norm: &TargetNorm,
) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            let raw = crate::model::predict(model, &inputs[i]);
            raw.iter()
                .enumerate()
                .map(|(t, &v)| norm.denormalize(t, v))
                .collect()
        })
        .collect()
}

/// Flatten (prediction, label) pairs over non-missing targets.
fn flatten_eval(dataset: &Dataset, idx: &[usize], rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (row, &i) in rows.iter().zip(idx) {
        for (t, &label) in dataset.samples[i].targets.iter().enumerate() {
            if !label.is_nan() {
                preds.push(row[t]);
                labels.push(label);
            }
        }
    }
    (preds, labels)
}

/// Evaluate `model` on the listed samples with the stored normalization.
pub fn evaluate(
    model: &Model,
    inputs: &[ModelInput],
    dataset: &Dataset,
    idx: &[usize],
    norm: &TargetNorm,
    metric: Metric,
) -> Result<f64, TrainError> {
    let rows = predict_rows(model, inputs, idx, norm);
    let (preds, labels) = flatten_eval(dataset, idx, &rows);
    compute_metric(metric, &preds, &labels)
}

/// Featurize every sample once up front.
pub fn featurize_dataset(dataset: &Dataset, d: usize) -> Vec<ModelInput> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let prep = prepare(&s.smiles, d).expect("dataset samples parse by construction");
            ModelInput::from_prepared(&prep)
        })
        .collect()
}

/// Minibatch Adam on squared error (regression, z-scored targets when
/// enabled) or logistic loss (classification), with early stopping on the
/// validation metric.
pub fn train(
    dataset: &Dataset,
    task: &TaskSpec,
    cfg: &TrainConfig,
    fold: &FoldSplit,
) -> Result<TrainOutcome, TrainError> {
    let inputs = featurize_dataset(dataset, cfg.model.d);
    train_with_inputs(dataset, &inputs, task, cfg, fold)
}

/// [`train`] with featurization hoisted out, for callers that reuse inputs
/// across folds or models.
pub fn train_with_inputs(
    dataset: &Dataset,
    inputs: &[ModelInput],
    task: &TaskSpec,
    cfg: &TrainConfig,
    fold: &FoldSplit,
) -> Result<TrainOutcome, TrainError> {
    if fold.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if fold.valid.is_empty() {
        return Err(TrainError::EmptySplit("valid"));
    }

    let norm = if task.kind == TaskKind::Regression && task.normalize_targets {
        TargetNorm::fit(dataset, &fold.train, task.n_targets)
    } else {
        TargetNorm::identity(task.n_targets)
    };

    let n_node = inputs[0].x.cols;
    let n_path = inputs[0].p.cols;
    let mut model = Model::init(
        cfg.kind,
        cfg.model.clone(),
        n_node,
        n_path,
        task.n_targets,
        cfg.seed,
    );
    let mut adam_state = {
        let named = model.named_params();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::new(&refs)
    };

    let mut rng = SplitMix64::new(cfg.seed ^ 0x7261_696E);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Model, usize, f64)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order = fold.train.clone();
        rng.shuffle(&mut order);

        // per-sample losses keyed by dataset index, summed in index order so
        // the reported epoch loss does not depend on batch grouping
        let mut loss_by_sample: Vec<f64> = vec![0.0; inputs.len()];
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut per_sample_params = Vec::with_capacity(batch.len());
            let mut sample_losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let (res, bound) = forward(&mut tape, &model, &inputs[i]);
                let sample = &dataset.samples[i];
                let loss = sample_loss(&mut tape, res.output, sample, task, &norm);
                let weighted = tape.scalar_mul(loss, sample.weight);
                loss_by_sample[i] = tape.value(weighted).item();
                sample_losses.push(weighted);
                per_sample_params.push(bound);
            }
            let mut total = sample_losses[0];
            for &l in &sample_losses[1..] {
                total = tape.add(total, l);
            }
            let batch_loss = tape.scalar_mul(total, 1.0 / batch.len() as f64);
            let loss_value = tape.value(batch_loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    loss: loss_value,
                });
            }

            let grads = tape.backward(batch_loss).expect("scalar loss");
            // each sample bound its own parameter leaves; total gradient is
            // the sum over the copies
            let mut named = model.named_params_mut();
            let mut summed: Vec<Tensor> = named
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
                .collect();
            for bound in &per_sample_params {
                debug_assert_eq!(bound.len(), summed.len());
                for (k, &id) in bound.iter().enumerate() {
                    if let Some(g) = grads.get(id) {
                        for (acc, v) in summed[k].data.iter_mut().zip(&g.data) {
                            *acc += v;
                        }
                    }
                }
            }
            let mut params: Vec<&mut Tensor> = named.iter_mut().map(|(_, t)| &mut **t).collect();
            adam_step(&mut params, &summed, &mut adam_state, &cfg.adam);
        }
        let train_loss = loss_by_sample.iter().sum::<f64>() / fold.train.len() as f64;

        let valid_metric = evaluate(&model, inputs, dataset, &fold.valid, &norm, task.metric)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_metric,
        });

        let improved = match &best {
            None => true,
            Some((_, _, incumbent)) => better(task.metric, valid_metric, *incumbent),
        };
        if improved {
            best = Some((model.clone(), epoch, valid_metric));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (best_model, best_epoch, best_valid) = best.expect("at least one epoch ran");
    let test_metric = evaluate(&best_model, inputs, dataset, &fold.test, &norm, task.metric)?;
    Ok(TrainOutcome {
        model: best_model,
        norm,
        history,
        best_epoch,
        best_valid,
        test_metric,
    })
}

/// Per-sample loss on the tape: squared error (averaged over non-missing
/// targets) for regression on normalized targets, logistic loss for
/// classification.
fn sample_loss(
    tape: &mut Tape,
    output: crate::autodiff::VarId,
    sample: &Sample,
    task: &TaskSpec,
    norm: &TargetNorm,
) -> crate::autodiff::VarId {
    let t = task.n_targets;
    let present: Vec<bool> = sample.targets.iter().map(|v| !v.is_nan()).collect();
    let n_present = present.iter().filter(|&&p| p).count().max(1);
    let target_vals: Vec<f64> = sample
        .targets
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if v.is_nan() {
                0.0
            } else if task.kind == TaskKind::Regression {
                norm.normalize(k, v)
            } else {
                v
            }
        })
        .collect();
    let targets = tape.constant(Tensor::from_vec(1, t, target_vals));

    let all_present = present.iter().all(|&p| p);
    let raw = match task.kind {
        TaskKind::Regression => {
            if all_present {
                tape.squared_error(output, targets)
            } else {
                let mask = tape.constant(Tensor::from_vec(
                    1,
                    t,
                    present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect(),
                ));
                let diff = tape.sub(output, targets);
                let sq = tape.mul(diff, diff);
                let masked = tape.mul(sq, mask);
                tape.sum_all(masked)
            }
        }
        TaskKind::Classification => {
            if all_present {
                tape.bce_with_logits(output, targets)
            } else {
                // zero out missing slots; bce(0, 0) adds the constant ln 2
                // per masked slot (zero gradient), so subtract it back
                let mask = tape.constant(Tensor::from_vec(
                    1,
                    t,
                    present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect(),
                ));
                let logits = tape.mul(output, mask);
                let labels = tape.mul(targets, mask);
                let bce = tape.bce_with_logits(logits, labels);
                let missing = (t - n_present) as f64;
                let correction = tape.constant(Tensor::scalar(-missing * 2f64.ln()));
                tape.add(bce, correction)
            }
        }
    };
    tape.scalar_mul(raw, 1.0 / n_present as f64)
}
