//! Training loops, evaluation, the feature-alignment probe and run artifacts.
//!
//! Each iteration draws one source/target batch and performs two updates:
//! the discriminator objective with generator features detached, then the
//! joint classifier and generator objective with the discriminator held
//! fixed behind a gradient reversal layer whose coefficient is the current
//! trade-off `lambda`.

mod config;
mod gradcheck;
mod metrics;
mod record;
mod trainer;

pub use config::{DatasetKind, DiscriminatorKind, Method, OptimizerChoice, RunConfig, TargetLoss};
pub use gradcheck::{
    registered_ops, run_grad_check_suite, GradCheckEntry, GradCheckReport, COMPOSITE_TOLERANCE, OP_TOLERANCE,
};
pub use metrics::{evaluate, median_distance, mmd_rbf};
pub use record::{RecordRow, RunRecord, RECORD_HEADER};
pub use trainer::{
    build_domains, train, train_on, ClassifierStats, DiscriminatorStats, Models, StepContext, TrainOutput, Trainer,
};

use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alda::AldaError;
use crate::data::{feature_header, write_feature_csv, DataError, LabeledSet};
use crate::io::write_string_atomic;
use crate::nn::NnError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Alda(#[from] AldaError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("run aborted at step {step}: {reason}")]
    Aborted {
        step: usize,
        reason: String,
        /// Probe rows collected before the failure.
        record: RunRecord,
    },
}

/// Final numbers of a run, written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub method: Method,
    pub steps: usize,
    pub src_acc: f64,
    pub tgt_acc: f64,
    pub accepted_frac: f64,
    pub mmd: f64,
}

impl FinalMetrics {
    pub fn from_record(cfg: &RunConfig, record: &RunRecord) -> Result<Self, HarnessError> {
        let last = record
            .last()
            .ok_or_else(|| HarnessError::Contract("empty run record".into()))?;
        Ok(Self {
            method: cfg.method,
            steps: cfg.total_steps,
            src_acc: last.src_acc,
            tgt_acc: last.tgt_acc,
            accepted_frac: last.accepted_frac,
            mmd: last.mmd,
        })
    }
}

/// Writes `record.csv`, `metrics.json` and `model.json` into `dir`.
pub fn write_run_outputs(dir: &Path, cfg: &RunConfig, out: &TrainOutput) -> Result<FinalMetrics, HarnessError> {
    let metrics = FinalMetrics::from_record(cfg, &out.record)?;
    out.record.write_csv(&dir.join("record.csv"))?;
    write_string_atomic(&dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
    write_string_atomic(&dir.join("model.json"), &serde_json::to_string(&out.models)?)?;
    Ok(metrics)
}

pub fn load_models(path: &Path) -> Result<Models, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Writes `x0,...,x{m-1},label,domain` rows of generator features.
pub fn export_features(models: &Models, sets: &[&LabeledSet], path: &Path) -> Result<usize, HarnessError> {
    let feats = sets
        .iter()
        .map(|s| models.features(s.features()))
        .collect::<Result<Vec<_>, _>>()?;
    let dim = models.generator.output_dim();
    let rows = sets.iter().zip(&feats).flat_map(|(s, f)| {
        (0..s.len()).map(move |i| (f.row(i), vec![s.labels()[i].to_string(), s.domain().to_string()]))
    });
    write_feature_csv(path, &feature_header(dim, &["label", "domain"]), rows)?;
    Ok(sets.iter().map(|s| s.len()).sum())
}

/// One (method, seed) run of an ablation.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub method: Method,
    pub seed: u64,
    pub outcome: Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub method: Method,
    pub mean_acc: f64,
    /// Sample standard deviation (n - 1); zero for a single run.
    pub std_acc: f64,
    /// Runs that finished.
    pub seeds: usize,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub cells: Vec<AblationCell>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    (mean, std)
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_acc,std_acc,seeds\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.method, r.mean_acc, r.std_acc, r.seeds));
        }
        out
    }

    pub fn row(&self, method: Method) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Final target accuracies of `method`, in seed order.
    pub fn accuracies(&self, method: Method) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| c.outcome.as_ref().ok().copied())
            .collect()
    }
}

/// Runs every method on every seed in parallel. Failed runs are kept as
/// cells with their error and left out of the row statistics.
pub fn ablation_suite(base: &RunConfig, methods: &[Method], seeds: &[u64]) -> Result<AblationTable, HarnessError> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Contract("ablation needs at least one method and one seed".into()));
    }
    base.validate()?;
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let cells: Vec<AblationCell> = jobs
        .par_iter()
        .map(|&(method, seed)| {
            let cfg = base.with_method(method).with_seed(seed);
            let outcome = train(&cfg)
                .and_then(|out| FinalMetrics::from_record(&cfg, &out.record))
                .map(|m| m.tgt_acc)
                .map_err(|e| e.to_string());
            AblationCell { method, seed, outcome }
        })
        .collect();
    let rows = methods
        .iter()
        .map(|&method| {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|c| c.method == method)
                .filter_map(|c| c.outcome.as_ref().ok().copied())
                .collect();
            let (mean_acc, std_acc) = mean_std(&accs);
            AblationRow {
                method,
                mean_acc,
                std_acc,
                seeds: accs.len(),
            }
        })
        .collect();
    Ok(AblationTable { rows, cells })
}
