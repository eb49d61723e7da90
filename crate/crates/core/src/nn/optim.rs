use serde::{Deserialize, Serialize};

use super::NnError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    /// `v <- momentum * v + g; p <- p - lr * v`
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::SgdMomentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter group.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    // velocity (sgd) or first moment (adam)
    first: Vec<Vec<f64>>,
    // second moment (adam only)
    second: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            shapes: Vec::new(),
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place. Buffers are sized on the first call and
    /// every later call must pass parameters of the same shapes.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<(), NnError> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(NnError::Optimizer(format!("learning rate {lr} must be positive")));
        }
        if params.len() != grads.len() {
            return Err(NnError::Optimizer(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(NnError::Optimizer(format!(
                    "parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                return Err(NnError::NonFiniteGradient(i));
            }
        }
        if self.shapes.is_empty() {
            self.shapes = params.iter().map(|p| p.shape().to_vec()).collect();
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        } else if self.shapes.len() != params.len()
            || self.shapes.iter().zip(params.iter()).any(|(s, p)| s != p.shape())
        {
            return Err(NnError::Optimizer("parameter shapes changed between steps".into()));
        }
        self.steps += 1;

        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vi = momentum * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pi, gi), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *pi -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::vector(vec![v])
    }

    fn run(kind: OptimizerKind, grads: &[f64], lr: f64) -> f64 {
        let mut opt = Optimizer::new(kind);
        let mut p = scalar_param(0.0);
        for &g in grads {
            opt.step(&mut [&mut p], &[scalar_param(g)], lr).unwrap();
        }
        p.data()[0]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        assert_eq!(run(OptimizerKind::sgd(), &[0.0, 0.0], 0.1), 0.0);
    }

    #[test]
    fn one_sgd_step() {
        assert!((run(OptimizerKind::sgd(), &[1.0], 0.1) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn two_sgd_steps_follow_momentum_recurrence() {
        // v1 = 1, v2 = 0.9 + 1 = 1.9; total = 0.1 * (1 + 1.9)
        assert!((run(OptimizerKind::sgd(), &[1.0, 1.0], 0.1) + 0.29).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        let grads = [0.3, -1.2, 2.5, 0.7];
        let got = run(OptimizerKind::SgdMomentum { momentum: 0.0 }, &grads, 0.05);
        let mut expected = 0.0;
        for g in grads {
            expected -= 0.05 * g;
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        for g in [1.0, -3.0, 0.5] {
            let p = run(OptimizerKind::adam(), &[g], 1e-3);
            assert!((p.abs() - 1e-3).abs() < 1e-9, "{p}");
            assert_eq!(p.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_constant_gradient_moves_at_lr_per_step() {
        let p = run(OptimizerKind::adam(), &[2.0; 50], 1e-3);
        assert!((p + 50.0 * 1e-3).abs() < 1e-8, "{p}");
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut opt = Optimizer::new(OptimizerKind::adam());
        let mut p = scalar_param(0.0);
        for i in 1..=3 {
            opt.step(&mut [&mut p], &[scalar_param(1.0)], 0.1).unwrap();
            assert_eq!(opt.steps(), i);
        }
    }

    #[test]
    fn errors() {
        let mut opt = Optimizer::new(OptimizerKind::sgd());
        let mut p = scalar_param(0.0);
        assert!(opt.step(&mut [&mut p], &[Tensor::vector(vec![1.0, 2.0])], 0.1).is_err());
        assert!(matches!(
            opt.step(&mut [&mut p], &[scalar_param(f64::NAN)], 0.1),
            Err(NnError::NonFiniteGradient(0))
        ));
        assert!(opt.step(&mut [&mut p], &[scalar_param(1.0)], 0.0).is_err());
        assert_eq!(p.data()[0], 0.0);
        opt.step(&mut [&mut p], &[scalar_param(1.0)], 0.1).unwrap();
        let mut q = Tensor::vector(vec![0.0, 0.0]);
        assert!(opt.step(&mut [&mut q], &[Tensor::vector(vec![1.0, 1.0])], 0.1).is_err());
    }
}
