use super::{HarnessError, Models};
use crate::alda::argmax;
use crate::data::LabeledSet;
use crate::tensor::Tensor;

/// Fraction of samples whose argmax prediction matches the label, with
/// dropout off.
pub fn evaluate(models: &Models, data: &LabeledSet) -> Result<f64, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::Contract("cannot evaluate on an empty set".into()));
    }
    let logits = models.logits(data.features())?;
    Ok(accuracy(&logits, data.labels()))
}

pub(crate) fn accuracy(scores: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(scores.row(r)) == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows of both sets.
pub fn median_distance(f_s: &Tensor, f_t: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = (0..f_s.rows())
        .map(|r| f_s.row(r))
        .chain((0..f_t.rows()).map(|r| f_t.row(r)))
        .collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    m.sqrt()
}

/// Unbiased squared MMD with kernel `exp(-|x - y|^2 / (2 sigma^2))`. With
/// `bandwidth = None`, sigma is the median pairwise distance of the pooled
/// sample (1 if that is zero).
pub fn mmd_rbf(f_s: &Tensor, f_t: &Tensor, bandwidth: Option<f64>) -> Result<f64, HarnessError> {
    let (m, n) = (f_s.rows(), f_t.rows());
    if m < 2 || n < 2 {
        return Err(HarnessError::Contract(format!("mmd needs 2 samples per side, got {m} and {n}")));
    }
    if f_s.cols() != f_t.cols() {
        return Err(HarnessError::Contract(format!(
            "mmd feature dims differ: {} vs {}",
            f_s.cols(),
            f_t.cols()
        )));
    }
    let sigma = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(HarnessError::Contract(format!("bandwidth {b} must be positive"))),
        None => {
            let med = median_distance(f_s, f_t);
            if med > 0.0 {
                med
            } else {
                1.0
            }
        }
    };
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |a: &[f64], b: &[f64]| (-gamma * sq_dist(a, b)).exp();
    let within = |f: &Tensor| {
        let rows = f.rows();
        let mut s = 0.0;
        for i in 0..rows {
            for j in i + 1..rows {
                s += k(f.row(i), f.row(j));
            }
        }
        2.0 * s / (rows * (rows - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += k(f_s.row(i), f_t.row(j));
        }
    }
    Ok(within(f_s) + within(f_t) - 2.0 * cross / (m * n) as f64)
}
