//! Central finite-difference verification of every tape op and of the full
//! attention model, shared by the `gradcheck` CLI command and the
//! acceptance suite.
//!
//! Relative error uses `|a - f| / max(|a| + |f|, 1e-4)`: a true relative
//! measure for gradients of ordinary size, degrading to an absolute
//! tolerance of 1e-8 for near-zero gradients where central differences are
//! dominated by cancellation noise.

use crate::autodiff::{Mask, Tape, Tensor, VarId};
use crate::model::{forward, Model, ModelConfig, ModelInput, ModelKind};
use crate::molgraph::prepare;
use crate::rng::SplitMix64;

pub const FD_EPSILON: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(1e-4)
}

/// Values bounded away from zero so ReLU-family kinks cannot straddle the
/// finite-difference stencil.
fn kink_safe(rng: &mut SplitMix64) -> f64 {
    let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
    sign * rng.next_range(0.2, 1.5)
}

fn random_tensor(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| kink_safe(rng)).collect(),
    )
}

/// Check `d loss / d input` for every entry of every listed input against
/// central differences. `build` must be a pure function of the leaf values.
fn fd_check(inputs: &[Tensor], build: impl Fn(&mut Tape, &[VarId]) -> VarId) -> f64 {
    let run = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &ids);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &ids);
    let grads = tape.backward(loss).expect("scalar loss");

    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[which], input.rows, input.cols);
        for entry in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[which].data[entry] += FD_EPSILON;
            let mut minus = inputs.to_vec();
            minus[which].data[entry] -= FD_EPSILON;
            let fd = (run(&plus) - run(&minus)) / (2.0 * FD_EPSILON);
            worst = worst.max(rel_err(analytic.data[entry], fd));
        }
    }
    worst
}

fn report(name: &str, cases: usize, max_rel_err: f64) -> GradCheckReport {
    GradCheckReport {
        name: name.to_string(),
        cases,
        max_rel_err,
        pass: max_rel_err < REL_TOLERANCE,
    }
}

macro_rules! op_check {
    ($reports:ident, $name:expr, $rng:ident, $cases:expr, $gen:expr, $build:expr) => {{
        let mut worst: f64 = 0.0;
        for _ in 0..$cases {
            #[allow(clippy::redundant_closure_call)]
            let inputs: Vec<Tensor> = ($gen)(&mut $rng);
            worst = worst.max(fd_check(&inputs, $build));
        }
        $reports.push(report($name, $cases, worst));
    }};
}

/// Gradient-check every registered op on random shapes, then the full
/// attention model end to end. Roughly 190 random cases in total.
pub fn run_full_suite(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = SplitMix64::new(seed);
    let mut reports = Vec::new();
    let cases = 8;

    op_check!(
        reports,
        "matmul",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, k, n) = (
                1 + r.next_index(4),
                1 + r.next_index(4),
                1 + r.next_index(4),
            );
            vec![random_tensor(m, k, r), random_tensor(k, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.matmul(ids[0], ids[1]);
            t.sum_all(y)
        }
    );

    op_check!(
        reports,
        "add",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (1 + r.next_index(4), 1 + r.next_index(4));
            vec![
                random_tensor(m, n, r),
                random_tensor(m, n, r),
                random_tensor(m, n, r),
            ]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.add(ids[0], ids[1]);
            let w = t.mul(y, ids[2]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "add_bias",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (2 + r.next_index(3), 1 + r.next_index(4));
            vec![
                random_tensor(m, n, r),
                random_tensor(1, n, r),
                random_tensor(m, n, r),
            ]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.add_bias(ids[0], ids[1]);
            let w = t.mul(y, ids[2]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "scalar_mul",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (1 + r.next_index(4), 1 + r.next_index(4));
            vec![random_tensor(m, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.scalar_mul(ids[0], -1.7);
            t.sum_all(y)
        }
    );

    op_check!(
        reports,
        "elementwise_mul",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (1 + r.next_index(4), 1 + r.next_index(4));
            vec![random_tensor(m, n, r), random_tensor(m, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.mul(ids[0], ids[1]);
            t.sum_all(y)
        }
    );

    op_check!(
        reports,
        "relu",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (1 + r.next_index(4), 1 + r.next_index(4));
            vec![random_tensor(m, n, r), random_tensor(m, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.relu(ids[0]);
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "leaky_relu",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (1 + r.next_index(4), 1 + r.next_index(4));
            vec![random_tensor(m, n, r), random_tensor(m, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.leaky_relu(ids[0], 0.2);
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "concat_axis0",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let n = 1 + r.next_index(4);
            let (m1, m2) = (1 + r.next_index(3), 1 + r.next_index(3));
            vec![
                random_tensor(m1, n, r),
                random_tensor(m2, n, r),
                random_tensor(m1 + m2, n, r),
            ]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.concat(ids[0], ids[1], 0);
            let w = t.mul(y, ids[2]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "concat_axis1",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let m = 1 + r.next_index(4);
            let (n1, n2) = (1 + r.next_index(3), 1 + r.next_index(3));
            vec![
                random_tensor(m, n1, r),
                random_tensor(m, n2, r),
                random_tensor(m, n1 + n2, r),
            ]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.concat(ids[0], ids[1], 1);
            let w = t.mul(y, ids[2]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "slice_cols",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let m = 1 + r.next_index(4);
            vec![random_tensor(m, 6, r), random_tensor(m, 3, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.slice_cols(ids[0], 2, 5);
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "row_sum",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (2 + r.next_index(3), 1 + r.next_index(4));
            vec![random_tensor(m, n, r), random_tensor(1, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.sum_rows(ids[0]);
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "masked_softmax",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let n = 3 + r.next_index(3);
            vec![random_tensor(n, n, r), random_tensor(n, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let n = t.value(ids[0]).rows;
            // diagonal-excluded mask, matching the attention use
            let valid: Vec<bool> = (0..n * n).map(|e| e / n != e % n).collect();
            let y = t.masked_softmax(ids[0], Mask::new(n, n, valid));
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "squared_error",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (1 + r.next_index(3), 1 + r.next_index(3));
            vec![random_tensor(m, n, r), random_tensor(m, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| t.squared_error(ids[0], ids[1])
    );

    op_check!(
        reports,
        "bce_with_logits",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let n = 1 + r.next_index(5);
            let logits = random_tensor(1, n, r);
            let labels = Tensor::from_vec(
                1,
                n,
                (0..n)
                    .map(|_| if r.next_f64() < 0.5 { 0.0 } else { 1.0 })
                    .collect(),
            );
            vec![logits, labels]
        },
        |t: &mut Tape, ids: &[VarId]| t.bce_with_logits(ids[0], ids[1])
    );

    op_check!(
        reports,
        "gather_rows",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (3 + r.next_index(3), 1 + r.next_index(3));
            vec![random_tensor(m, n, r), random_tensor(5, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let m = t.value(ids[0]).rows;
            let idx: Vec<usize> = (0..5).map(|e| (e * 7 + 1) % m).collect();
            let y = t.gather_rows(ids[0], &idx);
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "scatter_add_rows",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let n = 1 + r.next_index(3);
            vec![random_tensor(6, n, r), random_tensor(4, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let idx = [0usize, 2, 1, 2, 3, 0];
            let y = t.scatter_add_rows(ids[0], &idx, 4);
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "pair_weighted_sum",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let n = 2 + r.next_index(3);
            let f = 1 + r.next_index(3);
            vec![
                random_tensor(n, n, r),
                random_tensor(n * n, f, r),
                random_tensor(n, f, r),
            ]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.pair_weighted_sum(ids[0], ids[1]);
            let w = t.mul(y, ids[2]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "reshape",
        rng,
        cases,
        |r: &mut SplitMix64| vec![random_tensor(2, 6, r), random_tensor(4, 3, r)],
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.reshape(ids[0], 4, 3);
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    op_check!(
        reports,
        "layer_norm",
        rng,
        cases,
        |r: &mut SplitMix64| {
            let (m, n) = (1 + r.next_index(3), 3 + r.next_index(4));
            vec![random_tensor(m, n, r), random_tensor(m, n, r)]
        },
        |t: &mut Tape, ids: &[VarId]| {
            let y = t.layer_norm(ids[0], 1e-5);
            let w = t.mul(y, ids[1]);
            t.sum_all(w)
        }
    );

    reports.push(model_end_to_end(seed ^ 0x5EED_CAFE, 50));
    reports
}

/// Finite differences through the whole attention pipeline on a four-atom
/// molecule: perturb randomly chosen parameter entries and compare against
/// the tape gradient of the prediction.
pub fn model_end_to_end(seed: u64, n_params: usize) -> GradCheckReport {
    let mut rng = SplitMix64::new(seed);
    let prep = prepare("CC(=O)O", 3).expect("valid molecule");
    let input = ModelInput::from_prepared(&prep);
    let config = ModelConfig {
        layers: 2,
        heads: 2,
        dim: 8,
        d: 3,
        ..ModelConfig::default()
    };
    let base = Model::init(
        ModelKind::PagtnGlobal,
        config,
        input.x.cols,
        input.p.cols,
        1,
        seed,
    );

    let output_of = |m: &Model| -> f64 {
        let mut tape = Tape::new();
        let (res, _) = forward(&mut tape, m, &input);
        tape.value(res.output).item()
    };

    // analytic gradients, aligned with named_params order
    let mut tape = Tape::new();
    let (res, bound) = forward(&mut tape, &base, &input);
    let grads = tape.backward(res.output).expect("scalar output");

    let names: Vec<(String, (usize, usize))> = base
        .named_params()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape()))
        .collect();

    let mut worst: f64 = 0.0;
    for _ in 0..n_params {
        let which = rng.next_index(names.len());
        let (rows, cols) = names[which].1;
        let entry = rng.next_index(rows * cols);
        let analytic = grads.get_or_zeros(bound[which], rows, cols).data[entry];

        let mut plus = base.clone();
        plus.named_params_mut()[which].1.data[entry] += FD_EPSILON;
        let mut minus = base.clone();
        minus.named_params_mut()[which].1.data[entry] -= FD_EPSILON;
        let fd = (output_of(&plus) - output_of(&minus)) / (2.0 * FD_EPSILON);
        worst = worst.max(rel_err(analytic, fd));
    }
    report("pagtn_end_to_end", n_params, worst)
}
