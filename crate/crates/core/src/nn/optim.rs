use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Algorithm {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Algorithm {
    pub const ADAM: Algorithm = Algorithm::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// Halve the learning rate after an epoch whose loss did not improve.
    HalvingOnPlateau,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub schedule: Schedule,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
    best_loss: f64,
}

impl OptimState {
    pub fn new(algorithm: Algorithm, n_params: usize, lr: f64, schedule: Schedule) -> Self {
        let moments = match algorithm {
            Algorithm::Sgd => 0,
            Algorithm::Adam { .. } => n_params,
        };
        Self {
            algorithm,
            lr,
            schedule,
            step: 0,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
            best_loss: f64::INFINITY,
        }
    }

    pub fn adam(n_params: usize, lr: f64) -> Self {
        Self::new(Algorithm::ADAM, n_params, lr, Schedule::Constant)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(Algorithm::Sgd, 0, lr, Schedule::Constant)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::config(format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        match self.algorithm {
            Algorithm::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            Algorithm::Adam { beta1, beta2, eps } => {
                if self.first.len() != params.len() {
                    return Err(Error::config(format!(
                        "Adam moments sized for {} parameters, got {}",
                        self.first.len(),
                        params.len()
                    )));
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let lr = self.lr;
                for i in 0..params.len() {
                    let g = grads[i];
                    let m = beta1 * self.first[i] + (1.0 - beta1) * g;
                    let v = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    self.first[i] = m;
                    self.second[i] = v;
                    params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    pub fn end_epoch(&mut self, epoch_loss: f64) {
        if self.schedule == Schedule::HalvingOnPlateau && epoch_loss >= self.best_loss {
            self.lr *= 0.5;
        }
        self.best_loss = self.best_loss.min(epoch_loss);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0, 2.0];
        OptimState::sgd(0.5).step(&mut p, &[2.0, -2.0]).unwrap();
        assert_eq!(p, vec![0.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = OptimState::adam(1, 1e-3);
        let mut p = vec![0.0];
        opt.step(&mut p, &[5.0]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn plateau_halves() {
        let mut opt = OptimState::new(Algorithm::Sgd, 0, 1.0, Schedule::HalvingOnPlateau);
        opt.end_epoch(1.0);
        assert_eq!(opt.lr, 1.0);
        opt.end_epoch(1.5);
        assert_eq!(opt.lr, 0.5);
    }

    #[test]
    fn length_mismatch() {
        let mut opt = OptimState::adam(2, 1e-3);
        assert!(opt.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
