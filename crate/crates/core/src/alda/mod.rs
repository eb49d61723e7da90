//! Adversarial-learned loss.
//!
//! Pseudo-labels from the classifier are corrected through a class-wise
//! uniform confusion matrix whose diagonal `xi` comes from a discriminator,
//! `xi = sigmoid(D(G(x)))`:
//!
//! ```text
//! eta[k][l] = xi[k]                 if k == l
//!           = (1 - xi[l]) / (K - 1) otherwise
//! c = eta · p_hat
//! ```
//!
//! On source samples the discriminator pushes `c` toward the one-hot ground
//! truth, on accepted target samples toward the opposite distribution `u`
//! (zero at the pseudo-label, `1/(K-1)` elsewhere). The classifier trains on
//! target samples with `sum_k c_k (1 - p_k)`, the unhinged loss weighted by
//! the corrected label vector.
//!
//! Value-level functions operate on single samples; the batched versions
//! build differentiable expressions on a [`Tape`].

use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AldaError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("probability vector sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("need at least 2 classes, got {0}")]
    ClassCount(usize),
    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },
    #[error("expected length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("noise component {0} outside [0, 1]")]
    NoiseRange(f64),
    #[error("trade-off {0} outside [0, 1]")]
    Lambda(f64),
}

pub type Result<T, E = AldaError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub class_index: usize,
    pub confidence: f64,
    pub accepted: bool,
}

/// Per-class probability that the pseudo-label is correct.
///
/// A sigmoid never reaches 0 or 1, but the closed interval is admitted so the
/// limiting cases can be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector(Vec<f64>);

impl NoiseVector {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if xi.len() < 2 {
            return Err(AldaError::ClassCount(xi.len()));
        }
        if let Some(&bad) = xi.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AldaError::NoiseRange(bad));
        }
        Ok(Self(xi))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedLabelVector(Vec<f64>);

impl CorrectedLabelVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn pseudo_label(p: &[f64], delta: f64) -> Result<PseudoLabel> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(AldaError::Threshold(delta));
    }
    let total: f64 = p.iter().sum();
    if p.is_empty() || (total - 1.0).abs() > 1e-9 {
        return Err(AldaError::NotNormalized(total));
    }
    let class_index = argmax(p);
    let confidence = p[class_index];
    Ok(PseudoLabel {
        class_index,
        confidence,
        accepted: confidence > delta,
    })
}

/// Pseudo-labels for every row of a probability matrix.
pub fn pseudo_labels(probs: &Tensor, delta: f64) -> Result<Vec<PseudoLabel>> {
    (0..probs.rows()).map(|r| pseudo_label(probs.row(r), delta)).collect()
}

/// Class-wise uniform confusion matrix; every column sums to one.
pub fn confusion_matrix(xi: &NoiseVector) -> Result<Tensor> {
    let k = xi.classes();
    let off = (k - 1) as f64;
    let mut data = vec![0.0; k * k];
    for row in 0..k {
        for col in 0..k {
            data[row * k + col] = if row == col {
                xi.0[col]
            } else {
                (1.0 - xi.0[col]) / off
            };
        }
    }
    Ok(Tensor::matrix(k, k, data)?)
}

/// `c = eta(xi) · p_hat`.
pub fn corrected_label_vector(xi: &NoiseVector, p_hat: &[f64]) -> Result<CorrectedLabelVector> {
    let k = xi.classes();
    if p_hat.len() != k {
        return Err(AldaError::Dimension {
            expected: k,
            got: p_hat.len(),
        });
    }
    let eta = confusion_matrix(xi)?;
    let c = (0..k)
        .map(|row| eta.row(row).iter().zip(p_hat).map(|(e, p)| e * p).sum())
        .collect();
    Ok(CorrectedLabelVector(c))
}

/// Zero at `y_hat`, `1/(K-1)` elsewhere.
pub fn opposite_distribution(y_hat: usize, classes: usize) -> Result<Vec<f64>> {
    if classes < 2 {
        return Err(AldaError::ClassCount(classes));
    }
    if y_hat >= classes {
        return Err(AldaError::ClassIndex {
            index: y_hat,
            classes,
        });
    }
    let off = 1.0 / (classes - 1) as f64;
    Ok((0..classes).map(|k| if k == y_hat { 0.0 } else { off }).collect())
}

pub fn one_hot(index: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[index] = 1.0;
    v
}

/// Binary cross-entropy summed over the K components.
pub fn bce_vector(c: &[f64], target: &[f64]) -> Result<f64> {
    if c.len() != target.len() {
        return Err(AldaError::Dimension {
            expected: target.len(),
            got: c.len(),
        });
    }
    Ok(c.iter()
        .zip(target)
        .map(|(&ck, &t)| {
            let ck = ck.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -t * ck.ln() - (1.0 - t) * (1.0 - ck).ln()
        })
        .sum())
}

/// `1 - p[k]`. Panics if `k` is out of range.
pub fn unhinged_loss(p: &[f64], k: usize) -> f64 {
    1.0 - p[k]
}

/// `sum_k c_k (1 - p_k)`.
pub fn corrected_target_loss(c: &CorrectedLabelVector, p_t: &[f64]) -> Result<f64> {
    if c.0.len() != p_t.len() {
        return Err(AldaError::Dimension {
            expected: c.0.len(),
            got: p_t.len(),
        });
    }
    Ok((0..p_t.len()).map(|k| c.0[k] * unhinged_loss(p_t, k)).sum())
}

/// Scalar loss terms measured on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub l_src_ce: f64,
    pub l_adv_source: f64,
    pub l_adv_target: f64,
    pub l_reg: f64,
    pub l_target: f64,
}

/// Components plus the three per-network objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub components: LossComponents,
    pub lambda: f64,
    pub discriminator: f64,
    pub classifier: f64,
    pub generator: f64,
}

/// Discriminator: `L_adv + L_reg`. Classifier: `L_ce + λ L_T`.
/// Generator: `L_ce + λ L_T - λ L_adv`.
pub fn objectives(c: LossComponents, lambda: f64) -> Result<LossBundle> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AldaError::Lambda(lambda));
    }
    let adv = c.l_adv_source + c.l_adv_target;
    let classifier = c.l_src_ce + lambda * c.l_target;
    Ok(LossBundle {
        components: c,
        lambda,
        discriminator: adv + c.l_reg,
        classifier,
        generator: classifier - lambda * adv,
    })
}

// ---------------------------------------------------------------------------
// Batched, differentiable forms.

/// Which per-class basic loss the corrected target loss weights by `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasicLoss {
    /// `1 - p_k`
    Unhinged,
    /// `-log p_k`
    CrossEntropy,
}

/// Per-row pseudo-label distributions: one-hot at the argmax, or the
/// probability rows themselves when `soft`.
pub fn pseudo_label_matrix(probs: &Tensor, soft: bool) -> Tensor {
    if soft {
        return probs.clone();
    }
    let (rows, k) = (probs.rows(), probs.cols());
    let mut data = vec![0.0; rows * k];
    for r in 0..rows {
        data[r * k + argmax(probs.row(r))] = 1.0;
    }
    Tensor::new(vec![rows, k], data).expect("rows * k entries")
}

fn one_hot_matrix(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(AldaError::ClassIndex { index: y, classes });
        }
        data[r * classes + y] = 1.0;
    }
    Ok(Tensor::matrix(labels.len(), classes, data)?)
}

/// Row weights broadcast over `classes` columns.
fn row_weights(weights: &[f64], classes: usize) -> Tensor {
    let data = weights.iter().flat_map(|&w| std::iter::repeat(w).take(classes)).collect();
    Tensor::new(vec![weights.len(), classes], data).expect("weights * classes entries")
}

/// `1/n` for every row.
pub fn mean_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// `1/#accepted` on accepted rows, zero elsewhere. `None` when nothing is accepted.
pub fn accepted_weights(accepted: &[bool]) -> Option<Vec<f64>> {
    let n = accepted.iter().filter(|&&a| a).count();
    (n > 0).then(|| {
        accepted
            .iter()
            .map(|&a| if a { 1.0 / n as f64 } else { 0.0 })
            .collect()
    })
}

/// `c = xi ⊙ p_hat + ((1 - xi) ⊙ p_hat) · (J - I) / (K - 1)`, row by row.
pub fn corrected_labels<'t>(xi: Var<'t>, p_hat: &Tensor) -> Result<Var<'t>> {
    let k = p_hat.cols();
    if k < 2 {
        return Err(AldaError::ClassCount(k));
    }
    let tape = xi.tape();
    let off = 1.0 / (k - 1) as f64;
    let spread = Tensor::matrix(
        k,
        k,
        (0..k * k).map(|i| if i / k == i % k { 0.0 } else { off }).collect(),
    )?;
    let ph = tape.constant(p_hat.clone());
    let diag = xi.mul(ph)?;
    let moved = xi.one_minus()?.mul(ph)?.matmul(tape.constant(spread))?;
    Ok(diag.add(moved)?)
}

/// `sum_i w_i · bce_vector(c_i, target_i)`.
pub fn weighted_bce<'t>(c: Var<'t>, target: &Tensor, weights: &[f64]) -> Result<Var<'t>> {
    let tape = c.tape();
    let cc = c.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    let t = tape.constant(target.clone());
    let not_t = tape.constant(target.map(|v| 1.0 - v));
    let ll = cc.log()?.mul(t)?.add(cc.one_minus()?.log()?.mul(not_t)?)?;
    let w = tape.constant(row_weights(weights, target.cols()));
    Ok(ll.mul(w)?.sum()?.scale(-1.0)?)
}

/// `sum_i w_i · (-log softmax(logits_i)[labels_i])`.
pub fn weighted_cross_entropy<'t>(logits: Var<'t>, labels: &[usize], weights: &[f64]) -> Result<Var<'t>> {
    let classes = logits.value().cols();
    let tape = logits.tape();
    let mut target = one_hot_matrix(labels, classes)?;
    for (r, w) in weights.iter().enumerate() {
        target.data_mut()[r * classes..(r + 1) * classes]
            .iter_mut()
            .for_each(|v| *v *= w);
    }
    Ok(logits
        .log_softmax()?
        .mul(tape.constant(target))?
        .sum()?
        .scale(-1.0)?)
}

/// Inputs to the adversarial loss that are constants of the batch.
#[derive(Debug, Clone)]
pub struct BatchLabels {
    pub y_source: Vec<usize>,
    /// Pseudo-label distributions of source rows, `[n_s, K]`.
    pub source_pseudo: Tensor,
    /// Pseudo-label distributions of target rows, `[n_t, K]`.
    pub target_pseudo: Tensor,
    pub target_labels: Vec<PseudoLabel>,
}

impl BatchLabels {
    /// Builds the constants from classifier probabilities of both halves.
    pub fn new(y_source: Vec<usize>, p_source: &Tensor, p_target: &Tensor, delta: f64, soft: bool) -> Result<Self> {
        Ok(Self {
            y_source,
            source_pseudo: pseudo_label_matrix(p_source, soft),
            target_pseudo: pseudo_label_matrix(p_target, soft),
            target_labels: pseudo_labels(p_target, delta)?,
        })
    }

    pub fn classes(&self) -> usize {
        self.source_pseudo.cols()
    }

    pub fn accepted(&self) -> Vec<bool> {
        self.target_labels.iter().map(|p| p.accepted).collect()
    }

    pub fn accepted_count(&self) -> usize {
        self.target_labels.iter().filter(|p| p.accepted).count()
    }

    /// Opposite distributions of the target pseudo-labels, `[n_t, K]`.
    pub fn opposite_targets(&self) -> Result<Tensor> {
        let k = self.classes();
        let mut data = Vec::with_capacity(self.target_labels.len() * k);
        for p in &self.target_labels {
            data.extend(opposite_distribution(p.class_index, k)?);
        }
        Ok(Tensor::matrix(self.target_labels.len(), k, data)?)
    }
}

pub struct AdversarialLoss<'t> {
    pub source: Var<'t>,
    /// Zero constant when no target sample was accepted.
    pub target: Var<'t>,
    pub accepted: usize,
}

impl<'t> AdversarialLoss<'t> {
    pub fn no_accepted(&self) -> bool {
        self.accepted == 0
    }

    pub fn total(&self) -> Result<Var<'t>> {
        Ok(self.source.add(self.target)?)
    }
}

/// Source rows: mean BCE between `c` and the one-hot label. Accepted target
/// rows: mean BCE between `c` and the opposite distribution.
pub fn adversarial_loss<'t>(xi_source: Var<'t>, xi_target: Var<'t>, labels: &BatchLabels) -> Result<AdversarialLoss<'t>> {
    let k = labels.classes();
    let n_s = labels.y_source.len();
    let c_s = corrected_labels(xi_source, &labels.source_pseudo)?;
    let source = weighted_bce(c_s, &one_hot_matrix(&labels.y_source, k)?, &mean_weights(n_s))?;
    let tape = xi_source.tape();
    let (target, accepted) = match accepted_weights(&labels.accepted()) {
        None => (tape.constant(Tensor::scalar(0.0)), 0),
        Some(w) => {
            let c_t = corrected_labels(xi_target, &labels.target_pseudo)?;
            let l = weighted_bce(c_t, &labels.opposite_targets()?, &w)?;
            (l, labels.accepted_count())
        }
    };
    Ok(AdversarialLoss {
        source,
        target,
        accepted,
    })
}

/// Mean cross-entropy of `softmax(d_logits)` against the source labels.
pub fn reg_loss<'t>(d_logits_source: Var<'t>, y_source: &[usize]) -> Result<Var<'t>> {
    weighted_cross_entropy(d_logits_source, y_source, &mean_weights(y_source.len()))
}

/// Mean over accepted target rows of `sum_k c_k · basic(p_t, k)`. `c` is a
/// constant here. `None` when nothing is accepted.
pub fn corrected_target_loss_batch<'t>(
    c: &Tensor,
    target_logits: Var<'t>,
    accepted: &[bool],
    basic: BasicLoss,
) -> Result<Option<Var<'t>>> {
    let Some(w) = accepted_weights(accepted) else {
        return Ok(None);
    };
    let tape = target_logits.tape();
    let weighted_c = {
        let mut m = c.clone();
        let k = c.cols();
        for (r, w) in w.iter().enumerate() {
            m.data_mut()[r * k..(r + 1) * k].iter_mut().for_each(|v| *v *= w);
        }
        tape.constant(m)
    };
    let per_class = match basic {
        BasicLoss::Unhinged => target_logits.softmax()?.one_minus()?,
        BasicLoss::CrossEntropy => target_logits.log_softmax()?.scale(-1.0)?,
    };
    Ok(Some(per_class.mul(weighted_c)?.sum()?))
}

/// Uncorrected self-training loss: mean CE against accepted pseudo-labels.
pub fn pseudo_label_ce<'t>(target_logits: Var<'t>, labels: &[PseudoLabel]) -> Result<Option<Var<'t>>> {
    let accepted: Vec<bool> = labels.iter().map(|p| p.accepted).collect();
    let Some(w) = accepted_weights(&accepted) else {
        return Ok(None);
    };
    let classes: Vec<usize> = labels.iter().map(|p| p.class_index).collect();
    weighted_cross_entropy(target_logits, &classes, &w).map(Some)
}

/// Corrected labels as plain values, for use as a constant.
pub fn corrected_labels_value(xi: &Tensor, p_hat: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let c = corrected_labels(tape.constant(xi.clone()), p_hat)?;
    let v = c.value().clone();
    Ok(v)
}
