//! Finite-difference check of every tape op and of the three training
//! objectives.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::HarnessError;
use crate::alda::{
    adversarial_loss, corrected_labels_value, corrected_target_loss_batch, mean_weights, reg_loss,
    weighted_cross_entropy, BasicLoss, BatchLabels,
};
use crate::nn::{init_mlp, Activation, Dropout, Mlp};
use crate::tensor::{
    grad_check_multi, max_relative_error, numeric_gradient, OpKind, Tape, Tensor, TensorError, Var,
};

pub const OP_TOLERANCE: f64 = 1e-5;
pub const COMPOSITE_TOLERANCE: f64 = 1e-4;
const POINTS: usize = 20;
const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub composite: bool,
    pub points: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

impl fmt::Display for GradCheckEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} max_rel_err={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(GradCheckEntry::passed)
    }
}

struct OpCase {
    name: &'static str,
    kind: OpKind,
    shapes: Vec<Vec<usize>>,
    positive: bool,
}

fn op_cases() -> Vec<OpCase> {
    let case = |name, kind, shapes: &[&[usize]]| OpCase {
        name,
        kind,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        positive: false,
    };
    vec![
        case("matmul", OpKind::MatMul, &[&[3, 4], &[4, 2]]),
        case("add", OpKind::Add, &[&[3, 4], &[3, 4]]),
        case("add_bias", OpKind::Add, &[&[3, 4], &[4]]),
        case("sub", OpKind::Sub, &[&[3, 4], &[3, 4]]),
        case("mul", OpKind::Mul, &[&[3, 4], &[3, 4]]),
        case("relu", OpKind::Relu, &[&[3, 4]]),
        case("sigmoid", OpKind::Sigmoid, &[&[3, 4]]),
        case("tanh", OpKind::Tanh, &[&[3, 4]]),
        case("softmax", OpKind::Softmax, &[&[3, 4]]),
        case("log_softmax", OpKind::LogSoftmax, &[&[3, 4]]),
        OpCase {
            positive: true,
            ..case("log", OpKind::Log, &[&[3, 4]])
        },
        case("exp", OpKind::Exp, &[&[3, 4]]),
        case("sum", OpKind::Sum, &[&[3, 4]]),
        case("mean", OpKind::Mean, &[&[3, 4]]),
        case("slice_rows", OpKind::SliceRows { start: 1, end: 3 }, &[&[4, 3]]),
        case("concat_rows", OpKind::ConcatRows, &[&[2, 3], &[3, 3]]),
        case("scale", OpKind::Scale(-1.7), &[&[3, 4]]),
        case("add_scalar", OpKind::AddScalar(0.3), &[&[3, 4]]),
        case("clamp", OpKind::Clamp { lo: -0.5, hi: 0.5 }, &[&[3, 4]]),
    ]
}

/// `sum(op(inputs) ⊙ w)` so every output entry contributes with its own weight.
fn weighted<'t>(tape: &'t Tape, out: Var<'t>, w: &Tensor) -> crate::tensor::Result<Var<'t>> {
    if out.value().is_scalar() {
        out.scale(w.data()[0])
    } else {
        out.mul(tape.constant(w.clone()))?.sum()
    }
}

fn output_shape(case: &OpCase, inputs: &[Tensor]) -> Result<Vec<usize>, HarnessError> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    Ok(tape.apply(case.kind, &vars)?.shape())
}

fn random_inputs(case: &OpCase, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    case.shapes
        .iter()
        .map(|s| {
            let t = Tensor::randn(s, 1.0, rng);
            if case.positive {
                t.map(|v| v.abs() + 0.2)
            } else {
                t
            }
        })
        .collect()
}

fn check_op(case: &OpCase, rng: &mut ChaCha8Rng) -> Result<GradCheckEntry, HarnessError> {
    let mut worst = 0.0f64;
    for _ in 0..POINTS {
        let inputs = random_inputs(case, rng);
        let w = Tensor::randn(&output_shape(case, &inputs)?, 1.0, rng);
        let err = grad_check_multi(
            |tape, xs| weighted(tape, tape.apply(case.kind, xs)?, &w),
            &inputs,
            EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(GradCheckEntry {
        name: case.name.to_string(),
        composite: false,
        points: POINTS,
        max_rel_err: worst,
        tolerance: OP_TOLERANCE,
    })
}

/// The reversal layer is the identity forward, so its oracle is the negated,
/// scaled finite difference of the identity.
fn check_grl(rng: &mut ChaCha8Rng) -> Result<GradCheckEntry, HarnessError> {
    let coeff = 0.7;
    let mut worst = 0.0f64;
    for _ in 0..POINTS {
        let x = Tensor::randn(&[3, 4], 1.0, rng);
        let w = Tensor::randn(&[3, 4], 1.0, rng);
        let analytic = {
            let tape = Tape::new();
            let leaf = tape.leaf(x.clone());
            let root = weighted(&tape, leaf.grl(coeff)?, &w)?;
            tape.backward(root)?.wrt(leaf)
        };
        let numeric = numeric_gradient(
            |xs| {
                let tape = Tape::new();
                weighted(&tape, tape.constant(xs[0].clone()), &w)?.item()
            },
            std::slice::from_ref(&x),
            EPS,
        )?;
        let expected = numeric[0].map(|v| -coeff * v);
        worst = worst.max(max_relative_error(&[analytic], &[expected]));
    }
    Ok(GradCheckEntry {
        name: "grl".into(),
        composite: false,
        points: POINTS,
        max_rel_err: worst,
        tolerance: OP_TOLERANCE,
    })
}

/// A 4+4 sample batch with networks, frozen dropout masks and frozen
/// batch constants (pseudo-labels, corrected labels).
struct Composite {
    g: Mlp,
    c: Mlp,
    d: Mlp,
    x: Tensor,
    ys: Vec<usize>,
    g_masks: Vec<Tensor>,
    d_masks: Vec<Tensor>,
    labels: BatchLabels,
    corrected: Tensor,
    lambda: f64,
}

const N: usize = 4;

impl Composite {
    fn new(seed: u64) -> Result<Self, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = init_mlp(&[2, 6, 5], Activation::Relu, 0.3, rng.gen())?.with_output_activation(Activation::Relu);
        let c = init_mlp(&[5, 3], Activation::Relu, 0.0, rng.gen())?;
        let d = init_mlp(&[5, 6, 3], Activation::Relu, 0.3, rng.gen())?;
        let x = Tensor::randn(&[2 * N, 2], 1.0, &mut rng);
        let ys: Vec<usize> = (0..N).map(|i| i % 3).collect();

        let tape = Tape::new();
        let mut gd = Dropout::sample(&mut rng);
        let f = g.bind(&tape, false).forward(tape.constant(x.clone()), &mut gd)?;
        let g_masks = gd.into_masks();
        let probs = c.bind(&tape, false).forward(f, &mut Dropout::Off)?.softmax()?.value().clone();
        let mut dd = Dropout::sample(&mut rng);
        let xi = d.bind(&tape, false).forward(f, &mut dd)?.sigmoid()?.value().clone();
        let d_masks = dd.into_masks();
        let labels = BatchLabels::new(
            ys.clone(),
            &probs.slice_rows(0, N)?,
            &probs.slice_rows(N, 2 * N)?,
            0.0,
            false,
        )?;
        let corrected = corrected_labels_value(&xi.slice_rows(N, 2 * N)?, &labels.target_pseudo)?;
        Ok(Self {
            g,
            c,
            d,
            x,
            ys,
            g_masks,
            d_masks,
            labels,
            corrected,
            lambda: 0.8,
        })
    }

    fn vars<'t>(tape: &'t Tape, net: &Mlp, given: Option<&[Var<'t>]>) -> Vec<Var<'t>> {
        match given {
            Some(v) => v.to_vec(),
            None => net.params().into_iter().map(|p| tape.constant(p.clone())).collect(),
        }
    }

    /// Loss terms as functions of whichever parameter sets are given as vars.
    /// `grl` inserts the reversal layer in front of the discriminator.
    fn terms<'t>(
        &self,
        tape: &'t Tape,
        g: Option<&[Var<'t>]>,
        c: Option<&[Var<'t>]>,
        d: Option<&[Var<'t>]>,
        grl: Option<f64>,
    ) -> crate::tensor::Result<Terms<'t>> {
        let wrap = |e: crate::alda::AldaError| match e {
            crate::alda::AldaError::Tensor(t) => t,
            other => TensorError::Contract {
                op: "objective",
                detail: other.to_string(),
            },
        };
        let nn = |e: crate::nn::NnError| match e {
            crate::nn::NnError::Tensor(t) => t,
            other => TensorError::Contract {
                op: "objective",
                detail: other.to_string(),
            },
        };
        let gb = self.g.bind_vars(Self::vars(tape, &self.g, g)).map_err(nn)?;
        let cb = self.c.bind_vars(Self::vars(tape, &self.c, c)).map_err(nn)?;
        let db = self.d.bind_vars(Self::vars(tape, &self.d, d)).map_err(nn)?;
        let f = gb
            .forward(tape.constant(self.x.clone()), &mut Dropout::replay(&self.g_masks))
            .map_err(nn)?;
        let logits = cb.forward(f, &mut Dropout::Off).map_err(nn)?;
        let l_ce = weighted_cross_entropy(logits.slice_rows(0, N)?, &self.ys, &mean_weights(N)).map_err(wrap)?;
        let l_t = corrected_target_loss_batch(
            &self.corrected,
            logits.slice_rows(N, 2 * N)?,
            &self.labels.accepted(),
            BasicLoss::Unhinged,
        )
        .map_err(wrap)?
        .expect("threshold 0 accepts every sample");
        let d_in = match grl {
            Some(coeff) => f.grl(coeff)?,
            None => f,
        };
        let d_logits = db.forward(d_in, &mut Dropout::replay(&self.d_masks)).map_err(nn)?;
        let adv = adversarial_loss(
            d_logits.slice_rows(0, N)?.sigmoid()?,
            d_logits.slice_rows(N, 2 * N)?.sigmoid()?,
            &self.labels,
        )
        .map_err(wrap)?
        .total()
        .map_err(wrap)?;
        let l_reg = reg_loss(d_logits.slice_rows(0, N)?, &self.ys).map_err(wrap)?;
        Ok(Terms { l_ce, l_t, adv, l_reg })
    }
}

struct Terms<'t> {
    l_ce: Var<'t>,
    l_t: Var<'t>,
    adv: Var<'t>,
    l_reg: Var<'t>,
}

fn composite_entry(name: &str, err: f64) -> GradCheckEntry {
    GradCheckEntry {
        name: name.to_string(),
        composite: true,
        points: 1,
        max_rel_err: err,
        tolerance: COMPOSITE_TOLERANCE,
    }
}

fn check_composites(seed: u64) -> Result<Vec<GradCheckEntry>, HarnessError> {
    let s = Composite::new(seed)?;
    let lambda = s.lambda;
    let d_params: Vec<Tensor> = s.d.params().into_iter().cloned().collect();
    let c_params: Vec<Tensor> = s.c.params().into_iter().cloned().collect();
    let g_params: Vec<Tensor> = s.g.params().into_iter().cloned().collect();

    // Discriminator: L_adv + L_reg.
    let d_err = grad_check_multi(
        |tape, xs| {
            let t = s.terms(tape, None, None, Some(xs), None)?;
            t.adv.add(t.l_reg)
        },
        &d_params,
        EPS,
    )?;

    // Classifier: L_ce + lambda L_T.
    let c_err = grad_check_multi(
        |tape, xs| {
            let t = s.terms(tape, None, Some(xs), None, None)?;
            t.l_ce.add(t.l_t.scale(lambda)?)
        },
        &c_params,
        EPS,
    )?;

    // Generator: autodiff through the reversal layer against finite
    // differences of the explicit L_ce + lambda L_T - lambda L_adv.
    let analytic = {
        let tape = Tape::new();
        let leaves: Vec<Var<'_>> = g_params.iter().map(|p| tape.leaf(p.clone())).collect();
        let t = s.terms(&tape, Some(&leaves), None, None, Some(lambda))?;
        let root = t.l_ce.add(t.l_t.scale(lambda)?)?.add(t.adv)?;
        let grads = tape.backward(root)?;
        leaves.iter().map(|&l| grads.wrt(l)).collect::<Vec<_>>()
    };
    let numeric = numeric_gradient(
        |xs| {
            let tape = Tape::new();
            let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let t = s.terms(&tape, Some(&vars), None, None, None)?;
            t.l_ce
                .add(t.l_t.scale(lambda)?)?
                .sub(t.adv.scale(lambda)?)?
                .item()
        },
        &g_params,
        EPS,
    )?;
    let g_err = max_relative_error(&analytic, &numeric);

    Ok(vec![
        composite_entry("objective_discriminator", d_err),
        composite_entry("objective_classifier", c_err),
        composite_entry("objective_generator", g_err),
    ])
}

/// Every registered op at 20 random points, then the composite objectives.
pub fn run_grad_check_suite(seed: u64) -> Result<GradCheckReport, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for case in op_cases() {
        entries.push(check_op(&case, &mut rng)?);
    }
    entries.push(check_grl(&mut rng)?);
    entries.extend(check_composites(rng.gen())?);
    Ok(GradCheckReport { entries })
}

/// Op names covered by the suite, for completeness checks.
pub fn registered_ops() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = op_cases().iter().map(|c| c.kind.name()).collect();
    names.push(OpKind::Grl(1.0).name());
    names.dedup();
    names
}
