//! The path-augmented transformer and the graph-convolution baseline.
//!
//! Per layer and head, an additive attention score
//! `s_ij = W_s2 · LeakyReLU(W_s1 [h_i; h_j; p_ij])` feeds a row-wise softmax
//! that always excludes the source node; the node update is
//! `h_i = ReLU(W_h2 h_i + sum_j a_ij W_h1 [h_j; p_ij])`, heads concatenated.
//! The molecule embedding sums `ReLU(W_m [h_i; x_i])` over nodes and a
//! one-hidden-layer MLP maps it to the prediction. The Local variant
//! additionally masks out pairs farther than the path-truncation distance;
//! the GCN baseline aggregates bond-typed messages from immediate neighbors
//! only, then uses sum pooling and the same MLP head.
//!
//! The block matrices `score_src`/`score_dst`/`score_path` are the row
//! blocks of the concatenation-facing weight (likewise `update_nbr`/
//! `update_path`), so a product against the concatenated input equals the
//! sum of the per-block products.

use crate::autodiff::{Mask, Tape, Tensor, VarId};
use crate::molgraph::{bond_feature_vec, Prepared, BOND_FEATURES};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    PagtnGlobal,
    PagtnLocal,
    Gcn,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::PagtnGlobal => "pagtn",
            ModelKind::PagtnLocal => "pagtn-local",
            ModelKind::Gcn => "gcn",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        match s {
            "pagtn" | "pagtn-global" => Some(ModelKind::PagtnGlobal),
            "pagtn-local" => Some(ModelKind::PagtnLocal),
            "gcn" => Some(ModelKind::Gcn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Attention / convolution layers.
    pub layers: usize,
    /// Attention heads; must divide `dim`.
    pub heads: usize,
    /// Model feature width.
    pub dim: usize,
    /// Path-feature truncation distance; also the Local mask radius.
    pub d: usize,
    pub leaky_slope: f64,
    /// Optional post-layer normalization (off by default; the update's self
    /// term already plays the residual role).
    pub layer_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 5,
            heads: 1,
            dim: 64,
            d: 3,
            leaky_slope: 0.2,
            layer_norm: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 {
            return Err("layers must be at least 1".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.d == 0 {
            return Err("path truncation distance must be at least 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

fn xavier(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.next_range(-bound, bound))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    /// Row blocks of the score weight over `[h_i; h_j; p_ij]`.
    pub score_src: Tensor,
    pub score_dst: Tensor,
    pub score_path: Tensor,
    /// Maps the attention hidden vector to the scalar score.
    pub score_out: Tensor,
    /// Row blocks of the update weight over `[h_j; p_ij]`.
    pub update_nbr: Tensor,
    pub update_path: Tensor,
    /// Self transform (the residual-style term).
    pub update_self: Tensor,
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpParams {
    pub(crate) fn init_with(
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        MlpParams {
            w1: xavier(input, hidden, input, hidden, rng),
            b1: Tensor::zeros(1, hidden),
            w2: xavier(hidden, output, hidden, output, rng),
            b2: Tensor::zeros(1, output),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PagtnParams {
    /// Input projection, `F_n x F_m`.
    pub input_proj: Tensor,
    pub layers: Vec<Vec<HeadParams>>,
    /// Readout over `[h_i; x_i]`, `(F_m + F_n) x F_m`.
    pub readout: Tensor,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone)]
pub struct GcnLayerParams {
    pub w_self: Tensor,
    /// Row blocks over `[h_j; bond_features]`.
    pub w_nbr: Tensor,
    pub w_bond: Tensor,
}

#[derive(Debug, Clone)]
pub struct GcnParams {
    pub input_proj: Tensor,
    pub layers: Vec<GcnLayerParams>,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone)]
pub enum ModelParams {
    Pagtn(PagtnParams),
    Gcn(GcnParams),
}

/// A model bundle: kind, hyperparameters, learned tensors, output width.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub n_node_features: usize,
    pub n_path_features: usize,
    pub n_targets: usize,
    pub params: ModelParams,
}

impl Model {
    pub fn init(
        kind: ModelKind,
        config: ModelConfig,
        n_node_features: usize,
        n_path_features: usize,
        n_targets: usize,
        seed: u64,
    ) -> Model {
        config.validate().expect("invalid model config");
        let mut rng = SplitMix64::new(seed);
        let fm = config.dim;
        let fh = config.head_dim();
        let fp = n_path_features;
        let params = match kind {
            ModelKind::PagtnGlobal | ModelKind::PagtnLocal => {
                let input_proj = xavier(n_node_features, fm, n_node_features, fm, &mut rng);
                let mut layers = Vec::with_capacity(config.layers);
                for _ in 0..config.layers {
                    let mut heads = Vec::with_capacity(config.heads);
                    for _ in 0..config.heads {
                        let score_in = 2 * fh + fp;
                        let update_in = fh + fp;
                        heads.push(HeadParams {
                            score_src: xavier(fh, fh, score_in, fh, &mut rng),
                            score_dst: xavier(fh, fh, score_in, fh, &mut rng),
                            score_path: xavier(fp, fh, score_in, fh, &mut rng),
                            score_out: xavier(fh, 1, fh, 1, &mut rng),
                            update_nbr: xavier(fh, fh, update_in, fh, &mut rng),
                            update_path: xavier(fp, fh, update_in, fh, &mut rng),
                            update_self: xavier(fh, fh, fh, fh, &mut rng),
                        });
                    }
                    layers.push(heads);
                }
                let readout = xavier(fm + n_node_features, fm, fm + n_node_features, fm, &mut rng);
                let mlp = MlpParams::init_with(fm, fm, n_targets, &mut rng);
                ModelParams::Pagtn(PagtnParams {
                    input_proj,
                    layers,
                    readout,
                    mlp,
                })
            }
            ModelKind::Gcn => {
                let input_proj = xavier(n_node_features, fm, n_node_features, fm, &mut rng);
                let layers = (0..config.layers)
                    .map(|_| {
                        let msg_in = fm + BOND_FEATURES;
                        GcnLayerParams {
                            w_self: xavier(fm, fm, fm, fm, &mut rng),
                            w_nbr: xavier(fm, fm, msg_in, fm, &mut rng),
                            w_bond: xavier(BOND_FEATURES, fm, msg_in, fm, &mut rng),
                        }
                    })
                    .collect();
                let mlp = MlpParams::init_with(fm, fm, n_targets, &mut rng);
                ModelParams::Gcn(GcnParams {
                    input_proj,
                    layers,
                    mlp,
                })
            }
        };
        Model {
            kind,
            config,
            n_node_features,
            n_path_features,
            n_targets,
            params,
        }
    }

    /// Deterministically ordered (name, tensor) views of every parameter.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match &self.params {
            ModelParams::Pagtn(p) => {
                out.push(("input_proj".to_string(), &p.input_proj));
                for (l, heads) in p.layers.iter().enumerate() {
                    for (k, h) in heads.iter().enumerate() {
                        let pre = format!("layer{l}.head{k}");
                        out.push((format!("{pre}.score_src"), &h.score_src));
                        out.push((format!("{pre}.score_dst"), &h.score_dst));
                        out.push((format!("{pre}.score_path"), &h.score_path));
                        out.push((format!("{pre}.score_out"), &h.score_out));
                        out.push((format!("{pre}.update_nbr"), &h.update_nbr));
                        out.push((format!("{pre}.update_path"), &h.update_path));
                        out.push((format!("{pre}.update_self"), &h.update_self));
                    }
                }
                out.push(("readout".to_string(), &p.readout));
                push_mlp(&mut out, &p.mlp);
            }
            ModelParams::Gcn(p) => {
                out.push(("input_proj".to_string(), &p.input_proj));
                for (l, layer) in p.layers.iter().enumerate() {
                    out.push((format!("layer{l}.w_self"), &layer.w_self));
                    out.push((format!("layer{l}.w_nbr"), &layer.w_nbr));
                    out.push((format!("layer{l}.w_bond"), &layer.w_bond));
                }
                push_mlp(&mut out, &p.mlp);
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        match &mut self.params {
            ModelParams::Pagtn(p) => {
                out.push(("input_proj".to_string(), &mut p.input_proj));
                for (l, heads) in p.layers.iter_mut().enumerate() {
                    for (k, h) in heads.iter_mut().enumerate() {
                        let pre = format!("layer{l}.head{k}");
                        out.push((format!("{pre}.score_src"), &mut h.score_src));
                        out.push((format!("{pre}.score_dst"), &mut h.score_dst));
                        out.push((format!("{pre}.score_path"), &mut h.score_path));
                        out.push((format!("{pre}.score_out"), &mut h.score_out));
                        out.push((format!("{pre}.update_nbr"), &mut h.update_nbr));
                        out.push((format!("{pre}.update_path"), &mut h.update_path));
                        out.push((format!("{pre}.update_self"), &mut h.update_self));
                    }
                }
                out.push(("readout".to_string(), &mut p.readout));
                push_mlp_mut(&mut out, &mut p.mlp);
            }
            ModelParams::Gcn(p) => {
                out.push(("input_proj".to_string(), &mut p.input_proj));
                for (l, layer) in p.layers.iter_mut().enumerate() {
                    out.push((format!("layer{l}.w_self"), &mut layer.w_self));
                    out.push((format!("layer{l}.w_nbr"), &mut layer.w_nbr));
                    out.push((format!("layer{l}.w_bond"), &mut layer.w_bond));
                }
                push_mlp_mut(&mut out, &mut p.mlp);
            }
        }
        out
    }
}

fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, mlp: &'a MlpParams) {
    out.push(("mlp.w1".to_string(), &mlp.w1));
    out.push(("mlp.b1".to_string(), &mlp.b1));
    out.push(("mlp.w2".to_string(), &mlp.w2));
    out.push(("mlp.b2".to_string(), &mlp.b2));
}

fn push_mlp_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, mlp: &'a mut MlpParams) {
    out.push(("mlp.w1".to_string(), &mut mlp.w1));
    out.push(("mlp.b1".to_string(), &mut mlp.b1));
    out.push(("mlp.w2".to_string(), &mut mlp.w2));
    out.push(("mlp.b2".to_string(), &mut mlp.b2));
}

/// Featurized molecule in the exact form the forward passes consume.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub n: usize,
    /// Node features, `n x F_n`.
    pub x: Tensor,
    /// Path features, `(n*n) x F_p`, pair-major.
    pub p: Tensor,
    /// Flattened distance matrix, `-1` for unreachable.
    pub dist: Vec<i32>,
    /// Directed edges (src, dst) with bond features, both directions per bond.
    pub edges: Vec<(usize, usize, [f64; BOND_FEATURES])>,
}

impl ModelInput {
    pub fn from_prepared(prep: &Prepared) -> ModelInput {
        let n = prep.graph.n_atoms();
        let mut dist = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                dist.push(prep.apsp.dist(i, j));
            }
        }
        let mut edges = Vec::with_capacity(prep.graph.bonds.len() * 2);
        for bond in &prep.graph.bonds {
            let f = bond_feature_vec(bond.order, bond.is_conjugated, bond.in_ring);
            edges.push((bond.a, bond.b, f));
            edges.push((bond.b, bond.a, f));
        }
        ModelInput {
            n,
            x: prep.node_feats.clone(),
            p: prep.path.as_matrix(),
            dist,
            edges,
        }
    }
}

/// One attention matrix captured during a forward pass.
#[derive(Debug, Clone)]
pub struct AlphaRecord {
    pub layer: usize,
    pub head: usize,
    pub alpha: Tensor,
}

pub struct ForwardResult {
    /// `1 x n_targets` prediction (regression value or logit).
    pub output: VarId,
    /// `n x F_m` node embeddings after the last layer.
    pub node_embeddings: VarId,
    /// `1 x F_m` pooled molecule embedding.
    pub molecule_embedding: VarId,
    /// Attention probabilities per (layer, head); empty for the GCN.
    pub alphas: Vec<AlphaRecord>,
}

/// Attention mask: excludes the diagonal always; the Local variant also
/// masks pairs farther than `d` (or unreachable).
pub fn attention_mask(n: usize, dist: &[i32], kind: ModelKind, d: usize) -> Mask {
    let mut valid = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let ok = match kind {
                ModelKind::PagtnLocal => {
                    let dij = dist[i * n + j];
                    dij >= 1 && dij as usize <= d
                }
                _ => true,
            };
            valid[i * n + j] = ok;
        }
    }
    Mask::new(n, n, valid)
}

/// Full forward pass. Parameters are bound onto the tape as gradient leaves;
/// the returned map (aligned with [`Model::named_params`] order) lets the
/// caller pull gradients per parameter.
pub fn forward(tape: &mut Tape, model: &Model, input: &ModelInput) -> (ForwardResult, Vec<VarId>) {
    match &model.params {
        ModelParams::Pagtn(p) => pagtn_forward(tape, model, p, input),
        ModelParams::Gcn(p) => gcn_forward(tape, model, p, input),
    }
}

fn pagtn_forward(
    tape: &mut Tape,
    model: &Model,
    params: &PagtnParams,
    input: &ModelInput,
) -> (ForwardResult, Vec<VarId>) {
    let cfg = &model.config;
    let n = input.n;
    let fh = cfg.head_dim();
    let mut bound = Vec::new();
    let bind = |tape: &mut Tape, t: &Tensor, bound: &mut Vec<VarId>| {
        let id = tape.leaf(t.clone(), true);
        bound.push(id);
        id
    };

    let x = tape.constant(input.x.clone());
    let p = tape.constant(input.p.clone());
    let mask = attention_mask(n, &input.dist, model.kind, cfg.d);

    // pair index lists: row e = (i, j) with e = i*n + j
    let src_idx: Vec<usize> = (0..n * n).map(|e| e / n).collect();
    let dst_idx: Vec<usize> = (0..n * n).map(|e| e % n).collect();

    let w_in = bind(tape, &params.input_proj, &mut bound);
    let mut h = tape.matmul(x, w_in);
    let mut alphas = Vec::new();

    for (l, heads) in params.layers.iter().enumerate() {
        let mut head_outputs = Vec::with_capacity(heads.len());
        for (k, hp) in heads.iter().enumerate() {
            let hk = if heads.len() == 1 {
                h
            } else {
                tape.slice_cols(h, k * fh, (k + 1) * fh)
            };
            let w_ss = bind(tape, &hp.score_src, &mut bound);
            let w_sd = bind(tape, &hp.score_dst, &mut bound);
            let w_sp = bind(tape, &hp.score_path, &mut bound);
            let w_so = bind(tape, &hp.score_out, &mut bound);
            let w_un = bind(tape, &hp.update_nbr, &mut bound);
            let w_up = bind(tape, &hp.update_path, &mut bound);
            let w_us = bind(tape, &hp.update_self, &mut bound);

            // s_ij = w_so . LeakyReLU(h_i w_ss + h_j w_sd + p_ij w_sp)
            let a_proj = tape.matmul(hk, w_ss);
            let b_proj = tape.matmul(hk, w_sd);
            let c_proj = tape.matmul(p, w_sp);
            let a_pairs = tape.gather_rows(a_proj, &src_idx);
            let b_pairs = tape.gather_rows(b_proj, &dst_idx);
            let ab = tape.add(a_pairs, b_pairs);
            let pre = tape.add(ab, c_proj);
            let hidden = tape.leaky_relu(pre, cfg.leaky_slope);
            let scores_flat = tape.matmul(hidden, w_so);
            let scores = tape.reshape(scores_flat, n, n);
            let alpha = tape.masked_softmax(scores, mask.clone());
            alphas.push(AlphaRecord {
                layer: l,
                head: k,
                alpha: tape.value(alpha).clone(),
            });

            // u_ij = h_j w_un + p_ij w_up ; attn_i = sum_j a_ij u_ij
            let nbr_proj = tape.matmul(hk, w_un);
            let nbr_pairs = tape.gather_rows(nbr_proj, &dst_idx);
            let path_proj = tape.matmul(p, w_up);
            let u = tape.add(nbr_pairs, path_proj);
            let attn = tape.pair_weighted_sum(alpha, u);
            let self_term = tape.matmul(hk, w_us);
            let pre_act = tape.add(self_term, attn);
            head_outputs.push(tape.relu(pre_act));
        }
        let mut new_h = head_outputs[0];
        for &extra in &head_outputs[1..] {
            new_h = tape.concat(new_h, extra, 1);
        }
        if cfg.layer_norm {
            new_h = tape.layer_norm(new_h, 1e-5);
        }
        h = new_h;
    }

    // molecule embedding with residual to the raw node features
    let w_m = bind(tape, &params.readout, &mut bound);
    let h_and_x = tape.concat(h, x, 1);
    let pre_read = tape.matmul(h_and_x, w_m);
    let read = tape.relu(pre_read);
    let h_mol = tape.sum_rows(read);

    let output = mlp_forward(tape, &params.mlp, h_mol, &mut bound);
    (
        ForwardResult {
            output,
            node_embeddings: h,
            molecule_embedding: h_mol,
            alphas,
        },
        bound,
    )
}

pub(crate) fn mlp_forward(
    tape: &mut Tape,
    mlp: &MlpParams,
    input: VarId,
    bound: &mut Vec<VarId>,
) -> VarId {
    let w1 = tape.leaf(mlp.w1.clone(), true);
    let b1 = tape.leaf(mlp.b1.clone(), true);
    let w2 = tape.leaf(mlp.w2.clone(), true);
    let b2 = tape.leaf(mlp.b2.clone(), true);
    bound.extend([w1, b1, w2, b2]);
    let z1 = tape.matmul(input, w1);
    let z1b = tape.add_bias(z1, b1);
    let a1 = tape.relu(z1b);
    let z2 = tape.matmul(a1, w2);
    tape.add_bias(z2, b2)
}

fn gcn_forward(
    tape: &mut Tape,
    _model: &Model,
    params: &GcnParams,
    input: &ModelInput,
) -> (ForwardResult, Vec<VarId>) {
    let n = input.n;
    let mut bound = Vec::new();

    let x = tape.constant(input.x.clone());
    let src_idx: Vec<usize> = input.edges.iter().map(|e| e.0).collect();
    let dst_idx: Vec<usize> = input.edges.iter().map(|e| e.1).collect();
    let mut bf_data = Vec::with_capacity(input.edges.len() * BOND_FEATURES);
    for e in &input.edges {
        bf_data.extend_from_slice(&e.2);
    }
    let bond_feats = tape.constant(Tensor::from_vec(input.edges.len(), BOND_FEATURES, bf_data));

    let w_in = tape.leaf(params.input_proj.clone(), true);
    bound.push(w_in);
    let mut h = tape.matmul(x, w_in);

    for layer in &params.layers {
        let w_self = tape.leaf(layer.w_self.clone(), true);
        let w_nbr = tape.leaf(layer.w_nbr.clone(), true);
        let w_bond = tape.leaf(layer.w_bond.clone(), true);
        bound.extend([w_self, w_nbr, w_bond]);

        // message per directed edge: [h_src; bond] @ [w_nbr; w_bond]
        let h_src = tape.gather_rows(h, &src_idx);
        let msg_h = tape.matmul(h_src, w_nbr);
        let msg_b = tape.matmul(bond_feats, w_bond);
        let msg = tape.add(msg_h, msg_b);
        let agg = tape.scatter_add_rows(msg, &dst_idx, n);
        let self_term = tape.matmul(h, w_self);
        let pre = tape.add(self_term, agg);
        h = tape.relu(pre);
    }

    let h_mol = tape.sum_rows(h);
    let output = mlp_forward(tape, &params.mlp, h_mol, &mut bound);
    (
        ForwardResult {
            output,
            node_embeddings: h,
            molecule_embedding: h_mol,
            alphas: Vec::new(),
        },
        bound,
    )
}

/// Inference: fresh tape, returns the raw output row (regression value in
/// normalized space, or classification logit).
pub fn predict(model: &Model, input: &ModelInput) -> Vec<f64> {
    let mut tape = Tape::new();
    let (result, _) = forward(&mut tape, model, input);
    tape.value(result.output).data.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::prepare;

    fn small_model(kind: ModelKind, seed: u64) -> Model {
        let config = ModelConfig {
            layers: 2,
            heads: 2,
            dim: 8,
            d: 3,
            ..ModelConfig::default()
        };
        let prep = prepare("CC", 3).unwrap();
        let input = ModelInput::from_prepared(&prep);
        Model::init(kind, config, input.x.cols, input.p.cols, 1, seed)
    }

    fn forward_values(model: &Model, smiles: &str) -> (Vec<f64>, Vec<AlphaRecord>) {
        let prep = prepare(smiles, model.config.d).unwrap();
        let input = ModelInput::from_prepared(&prep);
        let mut tape = Tape::new();
        let (res, _) = forward(&mut tape, model, &input);
        (tape.value(res.output).data.clone(), res.alphas)
    }

    #[test]
    fn deterministic_prediction() {
        let model = small_model(ModelKind::PagtnGlobal, 3);
        let (a, _) = forward_values(&model, "CCO");
        let (b, _) = forward_values(&model, "CCO");
        assert_eq!(a, b);
    }

    #[test]
    fn two_node_global_attention_is_one() {
        let model = small_model(ModelKind::PagtnGlobal, 5);
        let (_, alphas) = forward_values(&model, "CC");
        for rec in &alphas {
            assert_eq!(rec.alpha.get(0, 1), 1.0);
            assert_eq!(rec.alpha.get(1, 0), 1.0);
            assert_eq!(rec.alpha.get(0, 0), 0.0);
            assert_eq!(rec.alpha.get(1, 1), 0.0);
        }
    }

    #[test]
    fn single_atom_molecule_runs_with_empty_attention() {
        let model = small_model(ModelKind::PagtnGlobal, 7);
        let (out, alphas) = forward_values(&model, "C");
        assert_eq!(out.len(), 1);
        assert!(out[0].is_finite());
        for rec in &alphas {
            assert_eq!(rec.alpha.data, vec![0.0]);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_excluding_diagonal() {
        let model = small_model(ModelKind::PagtnGlobal, 11);
        let (_, alphas) = forward_values(&model, "CC(=O)Nc1ccccc1");
        for rec in &alphas {
            let n = rec.alpha.rows;
            for i in 0..n {
                assert_eq!(rec.alpha.get(i, i), 0.0);
                let sum: f64 = rec.alpha.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_variant_masks_far_pairs() {
        let model = small_model(ModelKind::PagtnLocal, 13);
        let prep = prepare("CCCCCCCCCC", 3).unwrap();
        let input = ModelInput::from_prepared(&prep);
        let mut tape = Tape::new();
        let (res, _) = forward(&mut tape, &model, &input);
        for rec in &res.alphas {
            for i in 0..input.n {
                for j in 0..input.n {
                    let dist = input.dist[i * input.n + j];
                    if i != j && !(1..=3).contains(&dist) {
                        assert_eq!(rec.alpha.get(i, j), 0.0);
                    }
                }
            }
        }
        // benzene with d=2: each row attends to exactly 4 in-range atoms
        let mut cfg = model.config.clone();
        cfg.d = 2;
        let prep = prepare("c1ccccc1", 2).unwrap();
        let input = ModelInput::from_prepared(&prep);
        let local = Model::init(
            ModelKind::PagtnLocal,
            cfg,
            input.x.cols,
            input.p.cols,
            1,
            13,
        );
        let mut tape = Tape::new();
        let (res, _) = forward(&mut tape, &local, &input);
        for rec in &res.alphas {
            for i in 0..6 {
                let nonzero = rec.alpha.row(i).iter().filter(|&&v| v > 0.0).count();
                assert_eq!(nonzero, 4);
                let sum: f64 = rec.alpha.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    /// Straight-line reimplementation of one attention layer, looping over
    /// pairs with explicit concatenations.
    fn loop_oracle_layer(
        model: &Model,
        params: &PagtnParams,
        input: &ModelInput,
    ) -> (Tensor, Tensor) {
        let cfg = &model.config;
        let n = input.n;
        let fh = cfg.head_dim();
        let fm = cfg.dim;
        // h0 = x @ input_proj
        let mut h0 = Tensor::zeros(n, fm);
        for i in 0..n {
            for c in 0..fm {
                let mut acc = 0.0;
                for k in 0..input.x.cols {
                    acc += input.x.get(i, k) * params.input_proj.get(k, c);
                }
                h0.set(i, c, acc);
            }
        }
        let heads = &params.layers[0];
        let mut out = Tensor::zeros(n, fm);
        let mut alpha_all = Tensor::zeros(n, n); // first head's probabilities
        for (k, hp) in heads.iter().enumerate() {
            // scores
            let mut scores = Tensor::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let mut hidden = vec![0.0; fh];
                    for (c, hv) in hidden.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for t in 0..fh {
                            acc += h0.get(i, k * fh + t) * hp.score_src.get(t, c);
                            acc += h0.get(j, k * fh + t) * hp.score_dst.get(t, c);
                        }
                        for t in 0..input.p.cols {
                            acc += input.p.get(i * n + j, t) * hp.score_path.get(t, c);
                        }
                        *hv = if acc > 0.0 {
                            acc
                        } else {
                            cfg.leaky_slope * acc
                        };
                    }
                    let mut s = 0.0;
                    for (t, hv) in hidden.iter().enumerate() {
                        s += hv * hp.score_out.get(t, 0);
                    }
                    scores.set(i, j, s);
                }
            }
            // softmax excluding the diagonal
            let mut alpha = Tensor::zeros(n, n);
            for i in 0..n {
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if j != i && scores.get(i, j) > max {
                        max = scores.get(i, j);
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut denom = 0.0;
                for j in 0..n {
                    if j != i {
                        denom += (scores.get(i, j) - max).exp();
                    }
                }
                for j in 0..n {
                    if j != i {
                        alpha.set(i, j, (scores.get(i, j) - max).exp() / denom);
                    }
                }
            }
            if k == 0 {
                alpha_all = alpha.clone();
            }
            // update
            for i in 0..n {
                for c in 0..fh {
                    let mut acc = 0.0;
                    for t in 0..fh {
                        acc += h0.get(i, k * fh + t) * hp.update_self.get(t, c);
                    }
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let mut u = 0.0;
                        for t in 0..fh {
                            u += h0.get(j, k * fh + t) * hp.update_nbr.get(t, c);
                        }
                        for t in 0..input.p.cols {
                            u += input.p.get(i * n + j, t) * hp.update_path.get(t, c);
                        }
                        acc += alpha.get(i, j) * u;
                    }
                    out.set(i, c + k * fh, acc.max(0.0));
                }
            }
        }
        (out, alpha_all)
    }

    #[test]
    fn one_layer_matches_loop_oracle() {
        let config = ModelConfig {
            layers: 1,
            heads: 2,
            dim: 8,
            d: 2,
            ..ModelConfig::default()
        };
        let prep = prepare("OC1=CC(N)=CC=C1", 2).unwrap(); // 5-ring-ish random instance
        let input = ModelInput::from_prepared(&prep);
        let model = Model::init(
            ModelKind::PagtnGlobal,
            config,
            input.x.cols,
            input.p.cols,
            1,
            99,
        );
        let params = match &model.params {
            ModelParams::Pagtn(p) => p,
            _ => unreachable!(),
        };
        let (want_h, want_alpha) = loop_oracle_layer(&model, params, &input);

        let mut tape = Tape::new();
        let (res, _) = forward(&mut tape, &model, &input);
        let got_h = tape.value(res.node_embeddings);
        assert!(got_h.max_abs_diff(&want_h) < 1e-12);
        assert!(res.alphas[0].alpha.max_abs_diff(&want_alpha) < 1e-12);
    }

    #[test]
    fn permutation_invariance_of_prediction() {
        let model = small_model(ModelKind::PagtnGlobal, 21);
        let prep = prepare("CC(=O)Nc1ccc(O)cc1", 3).unwrap();
        let input = ModelInput::from_prepared(&prep);
        let n = input.n;
        let mut rng = crate::rng::SplitMix64::new(5);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);

        // permuted copies of x, p, dist
        let mut x2 = Tensor::zeros(n, input.x.cols);
        for (i, &pi) in perm.iter().enumerate() {
            x2.row_mut(i).copy_from_slice(input.x.row(pi));
        }
        let mut p2 = Tensor::zeros(n * n, input.p.cols);
        let mut dist2 = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                p2.row_mut(i * n + j)
                    .copy_from_slice(input.p.row(perm[i] * n + perm[j]));
                dist2[i * n + j] = input.dist[perm[i] * n + perm[j]];
            }
        }
        let permuted = ModelInput {
            n,
            x: x2,
            p: p2,
            dist: dist2,
            edges: Vec::new(),
        };
        let a = predict(&model, &input);
        let b = predict(&model, &permuted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn duplicated_component_doubles_embedding_contribution() {
        // Under the Local variant cross-component pairs are masked, so each
        // copy computes independently and sum pooling doubles exactly. (The
        // Global variant attends across components by design, so this
        // additivity is specific to Local/GCN.)
        let model = small_model(ModelKind::PagtnLocal, 31);
        let single = prepare("CCO", 3).unwrap();
        let double = prepare("CCO.CCO", 3).unwrap();
        let in1 = ModelInput::from_prepared(&single);
        let in2 = ModelInput::from_prepared(&double);

        let mut tape1 = Tape::new();
        let (r1, _) = forward(&mut tape1, &model, &in1);
        let mut tape2 = Tape::new();
        let (r2, _) = forward(&mut tape2, &model, &in2);

        // node embeddings of both copies match the single molecule
        let h1 = tape1.value(r1.node_embeddings);
        let h2 = tape2.value(r2.node_embeddings);
        for i in 0..in1.n {
            for c in 0..h1.cols {
                assert!((h1.get(i, c) - h2.get(i, c)).abs() < 1e-10);
                assert!((h1.get(i, c) - h2.get(i + in1.n, c)).abs() < 1e-10);
            }
        }
        // and the pooled embedding doubles
        let m1 = tape1.value(r1.molecule_embedding);
        let m2 = tape2.value(r2.molecule_embedding);
        for c in 0..m1.cols {
            assert!((2.0 * m1.get(0, c) - m2.get(0, c)).abs() < 1e-10);
        }
    }

    #[test]
    fn gcn_single_atom_and_star_locality() {
        let model = small_model(ModelKind::Gcn, 41);
        let (out, _) = forward_values(&model, "C");
        assert!(out[0].is_finite());

        // star: center 0 bonded to 4 leaves; after 1 layer a leaf's
        // embedding depends only on itself and the center
        let config = ModelConfig {
            layers: 1,
            heads: 1,
            dim: 8,
            d: 3,
            ..ModelConfig::default()
        };
        let prep = prepare("C(C)(C)(C)C", 3).unwrap();
        let input = ModelInput::from_prepared(&prep);
        let gcn = Model::init(ModelKind::Gcn, config, input.x.cols, input.p.cols, 1, 41);

        // perturb node features of leaf 2; leaf 1's embedding must not move
        let mut perturbed = input.clone();
        perturbed.x.set(2, 0, 0.5);
        let mut t1 = Tape::new();
        let (r1, _) = forward(&mut t1, &gcn, &input);
        let mut t2 = Tape::new();
        let (r2, _) = forward(&mut t2, &gcn, &perturbed);
        let h1 = tape_rows(&t1, r1.node_embeddings, 1);
        let h2 = tape_rows(&t2, r2.node_embeddings, 1);
        assert_eq!(h1, h2);
        // but the center (distance 1) must move
        let c1 = tape_rows(&t1, r1.node_embeddings, 0);
        let c2 = tape_rows(&t2, r2.node_embeddings, 0);
        assert_ne!(c1, c2);
    }

    fn tape_rows(tape: &Tape, id: VarId, row: usize) -> Vec<f64> {
        tape.value(id).row(row).to_vec()
    }

    #[test]
    fn gcn_receptive_field_is_layer_count() {
        // chain 0-1-2-3-4-5: a 2-layer GCN at node 0 ignores nodes beyond
        // distance 2
        let config = ModelConfig {
            layers: 2,
            heads: 1,
            dim: 8,
            d: 3,
            ..ModelConfig::default()
        };
        let prep = prepare("CCCCCC", 3).unwrap();
        let input = ModelInput::from_prepared(&prep);
        let gcn = Model::init(ModelKind::Gcn, config, input.x.cols, input.p.cols, 1, 43);

        let mut perturbed = input.clone();
        perturbed.x.set(3, 0, 9.0); // distance 3 from node 0
        let mut t1 = Tape::new();
        let (r1, _) = forward(&mut t1, &gcn, &input);
        let mut t2 = Tape::new();
        let (r2, _) = forward(&mut t2, &gcn, &perturbed);
        assert_eq!(
            tape_rows(&t1, r1.node_embeddings, 0),
            tape_rows(&t2, r2.node_embeddings, 0)
        );
        // distance 2 node does influence node 0
        let mut perturbed2 = input.clone();
        perturbed2.x.set(2, 0, 9.0);
        let mut t3 = Tape::new();
        let (r3, _) = forward(&mut t3, &gcn, &perturbed2);
        assert_ne!(
            tape_rows(&t1, r1.node_embeddings, 0),
            tape_rows(&t3, r3.node_embeddings, 0)
        );
    }
}
