use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::alda::BasicLoss;
use crate::data::ShiftSpec;
use crate::nn::{OptimizerKind, ScheduleParams};

/// Loss wiring of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Source cross-entropy only.
    SourceOnly,
    /// Source CE plus CE on accepted target pseudo-labels.
    St,
    /// Binary domain discriminator through gradient reversal.
    Dann,
    DannSt,
    Alda,
    AldaNoReg,
    AldaNoLt,
    /// Noise-correcting discriminator with uncorrected pseudo-label CE.
    AldaStNoLt,
    /// Corrected target loss with cross-entropy as the basic loss.
    AldaCeBasic,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::SourceOnly,
        Method::St,
        Method::Dann,
        Method::DannSt,
        Method::Alda,
        Method::AldaNoReg,
        Method::AldaNoLt,
        Method::AldaStNoLt,
        Method::AldaCeBasic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::St => "st",
            Method::Dann => "dann",
            Method::DannSt => "dann_st",
            Method::Alda => "alda",
            Method::AldaNoReg => "alda_no_reg",
            Method::AldaNoLt => "alda_no_lt",
            Method::AldaStNoLt => "alda_st_no_lt",
            Method::AldaCeBasic => "alda_ce_basic",
        }
    }

    pub fn discriminator(self) -> Option<DiscriminatorKind> {
        match self {
            Method::SourceOnly | Method::St => None,
            Method::Dann | Method::DannSt => Some(DiscriminatorKind::Domain),
            _ => Some(DiscriminatorKind::NoiseCorrecting),
        }
    }

    pub fn uses_reg(self) -> bool {
        matches!(
            self,
            Method::Alda | Method::AldaNoLt | Method::AldaStNoLt | Method::AldaCeBasic
        )
    }

    pub fn target_loss(self) -> TargetLoss {
        match self {
            Method::SourceOnly | Method::Dann | Method::AldaNoLt => TargetLoss::None,
            Method::St | Method::DannSt | Method::AldaStNoLt => TargetLoss::PseudoLabelCe,
            Method::Alda | Method::AldaNoReg => TargetLoss::Corrected(BasicLoss::Unhinged),
            Method::AldaCeBasic => TargetLoss::Corrected(BasicLoss::CrossEntropy),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorKind {
    /// One logit per sample: source vs target.
    Domain,
    /// `K` logits giving the noise vector `xi`.
    NoiseCorrecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetLoss {
    None,
    PseudoLabelCe,
    Corrected(BasicLoss),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    TwoMoons,
    Blobs,
    MnistUsps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Sgd,
    Adam,
}

/// Every knob of a run, flat so it maps one-to-one onto config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub dataset: DatasetKind,
    pub n_source: usize,
    pub n_target: usize,
    /// Moon jitter, or blob spread.
    pub source_noise: f64,
    /// Blob class count.
    pub classes: usize,
    pub shift_rotation_deg: f64,
    pub shift_tx: f64,
    pub shift_ty: f64,
    pub shift_scale: f64,
    pub shift_noise: f64,
    pub mnist_images: String,
    pub mnist_labels: String,
    pub usps_images: String,
    pub usps_labels: String,
    pub delta: f64,
    pub total_steps: usize,
    pub batch: usize,
    pub seed_init: u64,
    pub seed_data: u64,
    pub optimizer: OptimizerChoice,
    pub eta0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr_mult: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub probe_every: usize,
    pub mmd_samples: usize,
    /// Constant trade-off instead of the schedule.
    pub lambda_fixed: Option<f64>,
    pub soft_pseudo_labels: bool,
    pub reg_through_generator: bool,
    pub gen_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub disc_hidden: Vec<usize>,
    pub gen_dropout: f64,
    pub disc_dropout: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Alda,
            dataset: DatasetKind::TwoMoons,
            n_source: 2000,
            n_target: 2000,
            source_noise: 0.1,
            classes: 5,
            shift_rotation_deg: 35.0,
            shift_tx: 0.3,
            shift_ty: -0.2,
            shift_scale: 1.0,
            shift_noise: 0.08,
            mnist_images: String::new(),
            mnist_labels: String::new(),
            usps_images: String::new(),
            usps_labels: String::new(),
            delta: 0.9,
            total_steps: 4000,
            batch: 64,
            seed_init: 0,
            seed_data: 0,
            optimizer: OptimizerChoice::Sgd,
            eta0: 0.01,
            alpha: 10.0,
            beta: 0.75,
            lr_mult: 2.0,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            probe_every: 50,
            mmd_samples: 500,
            lambda_fixed: None,
            soft_pseudo_labels: false,
            reg_through_generator: false,
            gen_hidden: vec![64],
            feature_dim: 64,
            disc_hidden: vec![64, 64],
            gen_dropout: 0.0,
            disc_dropout: 0.2,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |key: &str, why: String| Err(HarnessError::Config(format!("`{key}`: {why}")));
        if self.total_steps == 0 {
            return bad("total_steps", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad("delta", format!("{} outside [0, 1]", self.delta));
        }
        if self.batch == 0 {
            return bad("batch", "must be positive".into());
        }
        if self.probe_every == 0 {
            return bad("probe_every", "must be positive".into());
        }
        if self.mmd_samples < 2 {
            return bad("mmd_samples", "needs at least 2".into());
        }
        if let Some(l) = self.lambda_fixed {
            if !(0.0..=1.0).contains(&l) {
                return bad("lambda_fixed", format!("{l} outside [0, 1]"));
            }
        }
        if self.feature_dim == 0 || self.gen_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return bad("gen_hidden", "layer widths must be positive".into());
        }
        for (key, rate) in [("gen_dropout", self.gen_dropout), ("disc_dropout", self.disc_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(key, format!("{rate} outside [0, 1)"));
            }
        }
        if self.dataset == DatasetKind::Blobs && self.classes < 2 {
            return bad("classes", "needs at least 2".into());
        }
        self.schedule()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.shift()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> ScheduleParams {
        ScheduleParams {
            eta0: self.eta0,
            alpha: self.alpha,
            beta: self.beta,
            lr_multiplier: self.lr_mult,
        }
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerChoice::Sgd => OptimizerKind::SgdMomentum { momentum: self.momentum },
            OptimizerChoice::Adam => OptimizerKind::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
        }
    }

    pub fn shift(&self) -> ShiftSpec {
        ShiftSpec {
            rotation: self.shift_rotation_deg.to_radians(),
            translation: vec![self.shift_tx, self.shift_ty],
            scale: self.shift_scale,
            noise_std: self.shift_noise,
        }
    }

    /// Same config with both seeds set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed_init: seed,
            seed_data: seed,
            ..self.clone()
        }
    }

    /// Bundled dataset and method defaults: `two-moons`, `blobs-k5`,
    /// `mnist-usps-subset`.
    pub fn preset(name: &str) -> Result<Self, HarnessError> {
        let base = Self::default();
        match name {
            "two-moons" => Ok(base),
            "blobs-k5" => Ok(Self {
                dataset: DatasetKind::Blobs,
                classes: 5,
                source_noise: 0.8,
                shift_rotation_deg: 20.0,
                shift_tx: 0.5,
                shift_ty: -0.5,
                shift_noise: 0.2,
                ..base
            }),
            "mnist-usps-subset" => Ok(Self {
                dataset: DatasetKind::MnistUsps,
                n_source: 2000,
                n_target: 1800,
                total_steps: 2000,
                probe_every: 100,
                delta: 0.6,
                optimizer: OptimizerChoice::Adam,
                eta0: 1e-3,
                alpha: 0.0,
                lr_mult: 1.0,
                gen_hidden: vec![256],
                feature_dim: 128,
                disc_hidden: vec![128, 128],
                ..base
            }),
            other => Err(HarnessError::Config(format!(
                "unknown preset `{other}` (expected {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub const PRESETS: [&'static str; 3] = ["two-moons", "blobs-k5", "mnist-usps-subset"];

    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }
}
