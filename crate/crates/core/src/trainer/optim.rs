use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradient-ascent optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, lr: f64, dim: usize) -> Self {
        Optimizer {
            config,
            lr,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Moves `theta` uphill along `grad`.
    pub fn ascend(&mut self, theta: &mut [f64], grad: &[f64]) {
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (x, g) in theta.iter_mut().zip(grad) {
                    *x += self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig { beta1, beta2, eps, .. } = self.config;
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((x, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *x += self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerConfig::default(), 0.01, 2);
        let mut x = vec![0.0, 0.0];
        opt.ascend(&mut x, &[3.0, -0.5]);
        assert!((x[0] - 0.01).abs() < 1e-9);
        assert!((x[1] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn sgd_is_plain_step() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..Default::default()
        };
        let mut opt = Optimizer::new(cfg, 0.5, 1);
        let mut x = vec![1.0];
        opt.ascend(&mut x, &[2.0]);
        assert_eq!(x, vec![2.0]);
    }
}
