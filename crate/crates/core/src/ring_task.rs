//! Synthetic ring-membership experiment: label atom pairs by whether they
//! share a perceived ring, then train a pairwise classifier on node
//! embeddings from a chosen backbone.
//!
//! The pair readout is the elementwise sum `h_i + h_j` (order-invariant by
//! construction) followed by a one-hidden-layer MLP on logistic loss.
//! Molecules split 80:10:10 at the molecule level so pairs never straddle
//! splits.

use thiserror::Error;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor, VarId};
use crate::model::{forward, mlp_forward, MlpParams, Model, ModelConfig, ModelInput, ModelKind};
use crate::molgraph::prepare;
use crate::rng::SplitMix64;
use crate::training::{auc, make_folds, TrainError};

/// One labeled atom pair; `label` is 1 when the atoms share a perceived ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingPairSample {
    pub molecule: usize,
    pub i: usize,
    pub j: usize,
    pub label: u8,
}

#[derive(Debug, Error)]
pub enum RingTaskError {
    #[error("no molecules with at least 2 perceived rings")]
    NoQualifyingMolecules,
    #[error("pair dataset has a single class")]
    SingleClass,
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Pairs generated per molecule: up to `per_class` same-ring and
/// `per_class` different-ring pairs, sampled without replacement.
pub const PAIRS_PER_CLASS: usize = 5;

#[derive(Debug)]
pub struct RingDataset {
    /// Indices into the caller's molecule list that had >= 2 rings.
    pub molecules: Vec<usize>,
    pub pairs: Vec<RingPairSample>,
    /// Rows dropped (unparseable or fewer than 2 rings).
    pub skipped: usize,
}

/// Filter to molecules with at least two perceived rings and sample up to
/// [`PAIRS_PER_CLASS`] same-ring and different-ring atom pairs from each.
/// `pair.molecule` indexes into the returned `molecules` list.
pub fn generate_ring_dataset(
    molecules: &[String],
    seed: u64,
) -> Result<RingDataset, RingTaskError> {
    let mut rng = SplitMix64::new(seed);
    let mut kept = Vec::new();
    let mut pairs = Vec::new();
    let mut skipped = 0usize;

    for (mi, smiles) in molecules.iter().enumerate() {
        let prep = match prepare(smiles, 1) {
            Ok(p) => p,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let rings = &prep.rings;
        if rings.n_rings() < 2 {
            skipped += 1;
            continue;
        }
        let n = prep.graph.n_atoms();
        let ring_atoms: Vec<usize> = (0..n).filter(|&a| prep.graph.atom_in_ring(a)).collect();
        let mut same = Vec::new();
        let mut diff = Vec::new();
        for (ai, &a) in ring_atoms.iter().enumerate() {
            for &b in &ring_atoms[ai + 1..] {
                if rings.same_ring(a, b) {
                    same.push((a, b));
                } else {
                    diff.push((a, b));
                }
            }
        }
        let local_index = kept.len();
        kept.push(mi);
        for &(a, b) in &rng.sample(&same, PAIRS_PER_CLASS) {
            pairs.push(RingPairSample {
                molecule: local_index,
                i: a,
                j: b,
                label: 1,
            });
        }
        for &(a, b) in &rng.sample(&diff, PAIRS_PER_CLASS) {
            pairs.push(RingPairSample {
                molecule: local_index,
                i: a,
                j: b,
                label: 0,
            });
        }
    }

    if kept.is_empty() {
        return Err(RingTaskError::NoQualifyingMolecules);
    }
    Ok(RingDataset {
        molecules: kept,
        pairs,
        skipped,
    })
}

/// Backbone plus pairwise classification head, trained end to end.
#[derive(Clone)]
pub struct PairClassifier {
    pub backbone: Model,
    pub head: MlpParams,
}

impl PairClassifier {
    pub fn init(
        kind: ModelKind,
        config: ModelConfig,
        n_node: usize,
        n_path: usize,
        seed: u64,
    ) -> PairClassifier {
        let backbone = Model::init(kind, config, n_node, n_path, 1, seed);
        let fm = backbone.config.dim;
        let mut rng = SplitMix64::new(seed ^ 0x7061_6972);
        PairClassifier {
            head: MlpParams::init_with(fm, fm, 1, &mut rng),
            backbone,
        }
    }

    /// Pair logits for one molecule on the given tape. Returns the logits
    /// var and every bound parameter id (backbone order, then head).
    pub fn forward_pairs(
        &self,
        tape: &mut Tape,
        input: &ModelInput,
        pair_i: &[usize],
        pair_j: &[usize],
    ) -> (VarId, Vec<VarId>) {
        let (res, mut bound) = forward(tape, &self.backbone, input);
        let hi = tape.gather_rows(res.node_embeddings, pair_i);
        let hj = tape.gather_rows(res.node_embeddings, pair_j);
        let pair_rep = tape.add(hi, hj);
        let logits = mlp_forward(tape, &self.head, pair_rep, &mut bound);
        (logits, bound)
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.backbone.named_params_mut();
        out.push(("pair_head.w1".to_string(), &mut self.head.w1));
        out.push(("pair_head.b1".to_string(), &mut self.head.b1));
        out.push(("pair_head.w2".to_string(), &mut self.head.w2));
        out.push(("pair_head.b2".to_string(), &mut self.head.b2));
        out
    }
}

#[derive(Debug, Clone)]
pub struct RingTaskConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub batch_molecules: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for RingTaskConfig {
    fn default() -> Self {
        RingTaskConfig {
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            batch_molecules: 8,
            epochs: 30,
            patience: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RingTaskOutcome {
    pub accuracy: f64,
    pub auc: f64,
    pub n_molecules: usize,
    pub n_test_pairs: usize,
    pub history: Vec<(usize, f64, f64)>,
}

struct MoleculePairs {
    input: ModelInput,
    pair_i: Vec<usize>,
    pair_j: Vec<usize>,
    labels: Vec<f64>,
}

/// Train the pair classifier end to end and report test accuracy (threshold
/// 0.5) and AUC on a held-out molecule-level split.
pub fn train_pair_classifier(
    kind: ModelKind,
    molecules: &[String],
    dataset: &RingDataset,
    cfg: &RingTaskConfig,
) -> Result<RingTaskOutcome, RingTaskError> {
    let labels_seen: Vec<u8> = dataset.pairs.iter().map(|p| p.label).collect();
    if labels_seen.iter().all(|&l| l == 1) || labels_seen.iter().all(|&l| l == 0) {
        return Err(RingTaskError::SingleClass);
    }

    // group pairs per molecule and featurize once
    let mut grouped: Vec<MoleculePairs> = dataset
        .molecules
        .iter()
        .map(|&mi| {
            let prep = prepare(&molecules[mi], cfg.model.d).expect("qualifying molecule parses");
            MoleculePairs {
                input: ModelInput::from_prepared(&prep),
                pair_i: Vec::new(),
                pair_j: Vec::new(),
                labels: Vec::new(),
            }
        })
        .collect();
    for p in &dataset.pairs {
        let slot = &mut grouped[p.molecule];
        slot.pair_i.push(p.i);
        slot.pair_j.push(p.j);
        slot.labels.push(p.label as f64);
    }
    grouped.retain(|g| !g.labels.is_empty());

    let n_mol = grouped.len();
    let fold = make_folds(n_mol, 1, cfg.seed)?.remove(0);

    let mut clf = PairClassifier::init(
        kind,
        cfg.model.clone(),
        grouped[0].input.x.cols,
        grouped[0].input.p.cols,
        cfg.seed,
    );
    let mut adam_state = {
        let named = clf.backbone.named_params();
        let mut refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        refs.push(&clf.head.w1);
        refs.push(&clf.head.b1);
        refs.push(&clf.head.w2);
        refs.push(&clf.head.b2);
        AdamState::new(&refs)
    };

    let evaluate = |clf: &PairClassifier, idx: &[usize]| -> (f64, f64) {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for &m in idx {
            let g = &grouped[m];
            let mut tape = Tape::new();
            let (logits, _) = clf.forward_pairs(&mut tape, &g.input, &g.pair_i, &g.pair_j);
            for (row, &label) in tape.value(logits).data.iter().zip(&g.labels) {
                scores.push(*row);
                labels.push(label);
            }
        }
        let acc = scores
            .iter()
            .zip(&labels)
            .filter(|(&s, &l)| (s > 0.0) == (l > 0.5))
            .count() as f64
            / scores.len() as f64;
        let auc_val = auc(&scores, &labels).unwrap_or(f64::NAN);
        (acc, auc_val)
    };

    let mut rng = SplitMix64::new(cfg.seed ^ 0x7269_6E67);
    let mut best: Option<(PairClassifier, f64)> = None;
    let mut stale = 0usize;
    let mut history = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut order = fold.train.clone();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for batch in order.chunks(cfg.batch_molecules) {
            let mut tape = Tape::new();
            let mut bound_lists = Vec::with_capacity(batch.len());
            let mut losses = Vec::with_capacity(batch.len());
            for &m in batch {
                let g = &grouped[m];
                let (logits, bound) = clf.forward_pairs(&mut tape, &g.input, &g.pair_i, &g.pair_j);
                let labels = tape.constant(Tensor::from_vec(g.labels.len(), 1, g.labels.clone()));
                let bce = tape.bce_with_logits(logits, labels);
                let loss = tape.scalar_mul(bce, 1.0 / g.labels.len() as f64);
                losses.push(loss);
                bound_lists.push(bound);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l);
            }
            let batch_loss = tape.scalar_mul(total, 1.0 / batch.len() as f64);
            epoch_loss += tape.value(batch_loss).item();
            batches += 1.0;

            let grads = tape.backward(batch_loss).expect("scalar loss");
            let mut named = clf.named_params_mut();
            let mut summed: Vec<Tensor> = named
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
                .collect();
            for bound in &bound_lists {
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

        let (valid_acc, valid_auc) = evaluate(&clf, &fold.valid);
        history.push((epoch, epoch_loss / batches, valid_auc));
        let score = if valid_auc.is_nan() {
            valid_acc
        } else {
            valid_auc
        };
        let improved = best.as_ref().map(|(_, s)| score > *s).unwrap_or(true);
        if improved {
            best = Some((clf.clone(), score));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (best_clf, _) = best.expect("at least one epoch");
    let (accuracy, auc_val) = evaluate(&best_clf, &fold.test);
    let n_test_pairs = fold.test.iter().map(|&m| grouped[m].labels.len()).sum();
    Ok(RingTaskOutcome {
        accuracy,
        auc: auc_val,
        n_molecules: n_mol,
        n_test_pairs,
        history,
    })
}

/// Export generated pairs as CSV (`molecule_index,i,j,label`), indices into
/// the original molecule list.
pub fn export_pairs_csv(path: &std::path::Path, dataset: &RingDataset) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "molecule_index,i,j,label")?;
    for p in &dataset.pairs {
        writeln!(
            f,
            "{},{},{},{}",
            dataset.molecules[p.molecule], p.i, p.j, p.label
        )?;
    }
    Ok(())
}
