//! Synthetic domain-shift datasets, IDX digit loading and batching.

mod batch;
mod idx;

pub use batch::{batch_iter, BatchIter, DomainBatch};
pub use idx::{load_idx, read_idx_images, read_idx_labels, resize_bilinear, IdxImages, Standardizer, DIGIT_SIDE};

use std::f64::consts::PI;
use std::fmt;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::write_atomic;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Contract(String),
    #[error("IDX format: {0}")]
    Format(String),
    #[error("inconsistent files: {0}")]
    Consistency(String),
    #[error("translation has {translation} components, features have {features}")]
    Dimension { translation: usize, features: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

/// Features with class labels. Target labels are kept for evaluation only;
/// training code sees target samples through [`DomainBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Tensor,
    labels: Vec<usize>,
    domain: Domain,
    classes: usize,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<usize>, domain: Domain, classes: usize) -> Result<Self> {
        let (n, _) = features
            .dims2()
            .filter(|_| features.shape().len() == 2)
            .ok_or_else(|| DataError::Contract(format!("features must be a matrix, got {:?}", features.shape())))?;
        if n != labels.len() {
            return Err(DataError::Contract(format!("{n} feature rows but {} labels", labels.len())));
        }
        if classes < 2 {
            return Err(DataError::Contract(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Contract(format!("label {bad} out of range for {classes} classes")));
        }
        if !features.all_finite() {
            return Err(DataError::Contract("features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            labels,
            domain,
            classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            domain: self.domain,
            classes: self.classes,
        }
    }

    /// Writes `x0,...,x{d-1},label,domain` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = feature_header(self.dim(), &["label", "domain"]);
        let rows = (0..self.len()).map(|i| {
            (
                self.features.row(i),
                vec![self.labels[i].to_string(), self.domain.to_string()],
            )
        });
        write_feature_csv(path, &header, rows)
    }
}

pub fn feature_header(dim: usize, extra: &[&str]) -> Vec<String> {
    (0..dim)
        .map(|j| format!("x{j}"))
        .chain(extra.iter().map(|s| s.to_string()))
        .collect()
}

/// Shared by dataset and feature export so both use the same float format.
pub fn write_feature_csv<'a, I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: Iterator<Item = (&'a [f64], Vec<String>)>,
{
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(header)?;
    for (x, extra) in rows {
        out.write_record(x.iter().map(|v| v.to_string()).chain(extra))?;
    }
    let bytes = out.into_inner().map_err(|e| e.into_error())?;
    write_atomic(path, |w| w.write_all(&bytes))?;
    Ok(())
}

/// Two interleaving half-circles. Class 0 lies on the upper unit arc
/// `(cos t, sin t)`, class 1 on `(1 - cos t, 0.5 - sin t)`, `t ~ U[0, pi]`,
/// both jittered by isotropic Gaussian noise.
pub fn gen_two_moons(n: usize, noise_std: f64, seed: u64) -> Result<LabeledSet> {
    if n < 2 || n % 2 != 0 {
        return Err(DataError::Contract(format!("two moons needs an even n >= 2, got {n}")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(DataError::Contract(format!("noise_std {noise_std} must be nonnegative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = rng.gen_range(0.0..=PI);
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let (ex, ey): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        data.push(x + noise_std * ex);
        data.push(y + noise_std * ey);
        labels.push(class);
    }
    LabeledSet::new(Tensor::matrix(n, 2, data)?, labels, Domain::Source, 2)
}

/// Similarity transform plus noise: `x -> scale * R(rotation) x + translation + e`.
/// Rotation acts on the first two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub rotation: f64,
    pub translation: Vec<f64>,
    pub scale: f64,
    pub noise_std: f64,
}

impl ShiftSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            rotation: 0.0,
            translation: vec![0.0; dim],
            scale: 1.0,
            noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(DataError::Contract(format!("shift scale {} must be positive", self.scale)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(DataError::Contract(format!("shift noise {} must be nonnegative", self.noise_std)));
        }
        if !self.rotation.is_finite() || self.translation.iter().any(|t| !t.is_finite()) {
            return Err(DataError::Contract("shift parameters must be finite".into()));
        }
        Ok(())
    }
}

pub fn apply_shift(set: &LabeledSet, spec: &ShiftSpec, seed: u64) -> Result<LabeledSet> {
    spec.validate()?;
    let d = set.dim();
    if spec.translation.len() != d {
        return Err(DataError::Dimension {
            translation: spec.translation.len(),
            features: d,
        });
    }
    if d < 2 && spec.rotation != 0.0 {
        return Err(DataError::Contract("rotation needs at least 2 feature dimensions".into()));
    }
    let (sin, cos) = spec.rotation.sin_cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.features.clone();
    for row in out.data_mut().chunks_mut(d) {
        if d >= 2 {
            let (x, y) = (row[0], row[1]);
            row[0] = cos * x - sin * y;
            row[1] = sin * x + cos * y;
        }
        for (v, t) in row.iter_mut().zip(&spec.translation) {
            *v = spec.scale * *v + t;
            if spec.noise_std > 0.0 {
                *v += spec.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    LabeledSet::new(out, set.labels.clone(), Domain::Target, set.classes)
}

/// `K` isotropic Gaussian clusters in the plane. Centers are drawn from
/// `centers_seed` inside `[-5, 5]^2` at least 2 apart; samples are assigned
/// round-robin so the label histogram is balanced within one.
pub fn gen_blobs(n: usize, classes: usize, centers_seed: u64, spread: f64, seed: u64) -> Result<LabeledSet> {
    if classes < 2 {
        return Err(DataError::Contract(format!("need at least 2 classes, got {classes}")));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(DataError::Contract(format!("spread {spread} must be nonnegative")));
    }
    let centers = blob_centers(classes, centers_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        for c in centers[k] {
            data.push(c + spread * rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(k);
    }
    LabeledSet::new(Tensor::matrix(n, 2, data)?, labels, Domain::Source, classes)
}

fn blob_centers(classes: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    const MIN_SEPARATION: f64 = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while centers.len() < classes {
        attempts += 1;
        if attempts > 100_000 {
            return Err(DataError::Contract(format!("cannot place {classes} separated blob centers")));
        }
        let c = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let far = centers
            .iter()
            .all(|o: &[f64; 2]| ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt() >= MIN_SEPARATION);
        if far {
            centers.push(c);
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        let s = gen_two_moons(200, 0.0, 3).unwrap();
        for i in 0..s.len() {
            let (x, y) = (s.features().get(i, 0), s.features().get(i, 1));
            if s.labels()[i] == 0 {
                assert!((x.hypot(y) - 1.0).abs() < 1e-12 && y >= 0.0);
            } else {
                assert!(((1.0 - x).hypot(0.5 - y) - 1.0).abs() < 1e-12 && y <= 0.5);
            }
        }
    }

    #[test]
    fn moons_are_balanced_and_deterministic() {
        let a = gen_two_moons(100, 0.1, 9).unwrap();
        assert_eq!(a.labels().iter().filter(|&&l| l == 0).count(), 50);
        assert_eq!(a, gen_two_moons(100, 0.1, 9).unwrap());
        assert_ne!(a, gen_two_moons(100, 0.1, 10).unwrap());
        assert!(matches!(gen_two_moons(7, 0.1, 0), Err(DataError::Contract(_))));
    }

    #[test]
    fn identity_shift_keeps_features() {
        let s = gen_two_moons(50, 0.1, 1).unwrap();
        let t = apply_shift(&s, &ShiftSpec::identity(2), 4).unwrap();
        assert_eq!(t.features(), s.features());
        assert_eq!(t.labels(), s.labels());
        assert_eq!(t.domain(), Domain::Target);
    }

    #[test]
    fn half_turn_is_an_involution() {
        let s = gen_two_moons(50, 0.1, 1).unwrap();
        let spec = ShiftSpec {
            rotation: PI,
            ..ShiftSpec::identity(2)
        };
        let back = apply_shift(&apply_shift(&s, &spec, 0).unwrap(), &spec, 0).unwrap();
        for (a, b) in back.features().data().iter().zip(s.features().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_distances() {
        let s = gen_two_moons(40, 0.1, 2).unwrap();
        let spec = ShiftSpec {
            rotation: 0.61,
            translation: vec![0.3, -0.2],
            ..ShiftSpec::identity(2)
        };
        let t = apply_shift(&s, &spec, 0).unwrap();
        let dist = |m: &Tensor, i: usize, j: usize| (m.get(i, 0) - m.get(j, 0)).hypot(m.get(i, 1) - m.get(j, 1));
        for i in 0..40 {
            for j in 0..40 {
                assert!((dist(s.features(), i, j) - dist(t.features(), i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_errors() {
        let s = gen_two_moons(10, 0.1, 2).unwrap();
        assert!(matches!(
            apply_shift(&s, &ShiftSpec::identity(3), 0),
            Err(DataError::Dimension { translation: 3, features: 2 })
        ));
        let bad = ShiftSpec {
            scale: 0.0,
            ..ShiftSpec::identity(2)
        };
        assert!(apply_shift(&s, &bad, 0).is_err());
    }

    #[test]
    fn blobs_collapse_without_spread() {
        let s = gen_blobs(100, 5, 7, 0.0, 1).unwrap();
        for i in 0..s.len() {
            let k = s.labels()[i];
            assert_eq!(s.features().row(i), s.features().row(k));
        }
        assert_eq!(s, gen_blobs(100, 5, 7, 0.0, 1).unwrap());
    }

    #[test]
    fn blobs_are_balanced() {
        let s = gen_blobs(103, 5, 7, 0.5, 1).unwrap();
        let mut hist = [0usize; 5];
        for &l in s.labels() {
            hist[l] += 1;
        }
        assert!(hist.iter().max().unwrap() - hist.iter().min().unwrap() <= 1);
        assert!(gen_blobs(10, 1, 0, 0.5, 0).is_err());
    }

    #[test]
    fn labeled_set_validation() {
        let f = Tensor::zeros(&[2, 2]);
        assert!(LabeledSet::new(f.clone(), vec![0], Domain::Source, 2).is_err());
        assert!(LabeledSet::new(f.clone(), vec![0, 2], Domain::Source, 2).is_err());
        let nan = Tensor::matrix(1, 1, vec![f64::NAN]).unwrap();
        assert!(LabeledSet::new(nan, vec![0], Domain::Source, 2).is_err());
        assert!(LabeledSet::new(f, vec![0, 1], Domain::Source, 2).is_ok());
    }
}
