use serde::{Deserialize, Serialize};

use super::NnError;

/// Parameter groups with separate learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Generator,
    Classifier,
    Discriminator,
}

/// Annealed learning rate `eta0 / (1 + alpha q)^beta`. The classifier and
/// discriminator groups are trained from scratch and run at
/// `lr_multiplier` times the generator rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub eta0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr_multiplier: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            eta0: 0.01,
            alpha: 10.0,
            beta: 0.75,
            lr_multiplier: 10.0,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.eta0 > 0.0 && self.alpha >= 0.0 && self.beta >= 0.0 && self.lr_multiplier > 0.0;
        let finite = [self.eta0, self.alpha, self.beta, self.lr_multiplier]
            .iter()
            .all(|v| v.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(NnError::Schedule(format!("{self:?}")))
        }
    }

    pub fn multiplier(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Generator => 1.0,
            ParamGroup::Classifier | ParamGroup::Discriminator => self.lr_multiplier,
        }
    }
}

fn check_progress(q: f64) -> Result<(), NnError> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(NnError::Progress(q))
    }
}

/// Learning rate for `group` at training progress `q`.
pub fn lr_schedule(q: f64, sp: &ScheduleParams, group: ParamGroup) -> Result<f64, NnError> {
    check_progress(q)?;
    sp.validate()?;
    Ok(sp.eta0 / (1.0 + sp.alpha * q).powf(sp.beta) * sp.multiplier(group))
}

/// Adversarial trade-off `2 / (1 + exp(-10 q)) - 1`, rising from 0 toward 1.
pub fn lambda_schedule(q: f64) -> Result<f64, NnError> {
    check_progress(q)?;
    Ok(2.0 / (1.0 + (-10.0 * q).exp()) - 1.0)
}
