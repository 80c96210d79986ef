use serde::{Deserialize, Serialize};

/// Serializable optimizer choice; [`OptimizerConfig::build`] instantiates it
/// for a parameter vector of known length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    RmsProp {
        learning_rate: f64,
        decay: f64,
        epsilon: f64,
    },
    Sgd {
        learning_rate: f64,
    },
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig::Adam {
            learning_rate,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn build(&self, n: usize) -> Optimizer {
        match *self {
            OptimizerConfig::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => Optimizer::Adam(Adam::new(n, learning_rate, beta1, beta2, epsilon)),
            OptimizerConfig::RmsProp {
                learning_rate,
                decay,
                epsilon,
            } => Optimizer::RmsProp {
                learning_rate,
                decay,
                epsilon,
                mean_square: vec![0.0; n],
            },
            OptimizerConfig::Sgd { learning_rate } => Optimizer::Sgd { learning_rate },
        }
    }
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam(Adam),
    RmsProp {
        learning_rate: f64,
        decay: f64,
        epsilon: f64,
        mean_square: Vec<f64>,
    },
    Sgd {
        learning_rate: f64,
    },
}

impl Optimizer {
    /// Descent step: moves `params` against `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Adam(adam) => adam.step(params, grad),
            Optimizer::RmsProp {
                learning_rate,
                decay,
                epsilon,
                mean_square,
            } => {
                for ((p, g), s) in params.iter_mut().zip(grad).zip(mean_square.iter_mut()) {
                    *s = *decay * *s + (1.0 - *decay) * g * g;
                    *p -= *learning_rate * g / (s.sqrt() + *epsilon);
                }
            }
            Optimizer::Sgd { learning_rate } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *learning_rate * g;
                }
            }
        }
    }
}

/// Adam with bias-corrected moments and the tolerance added outside the
/// square root: `p ← p − α·m̂ / (√v̂ + e)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn iteration(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_matches_hand_computed_steps() {
        // two steps on a scalar with gradients 2 then -1
        let (a, b1, b2, e) = (0.1, 0.9, 0.999, 1e-8);
        let mut adam = Adam::new(1, a, b1, b2, e);
        let mut p = [1.0];
        adam.step(&mut p, &[2.0]);
        // first step: m̂ = g, v̂ = g², so the move is a·sign(g) up to e
        let expected1 = 1.0 - a * 2.0 / (2.0 + e);
        assert!((p[0] - expected1).abs() < 1e-15);
        adam.step(&mut p, &[-1.0]);
        let m = b1 * (1.0 - b1) * 2.0 + (1.0 - b1) * -1.0;
        let v = b2 * (1.0 - b2) * 4.0 + (1.0 - b2) * 1.0;
        let m_hat = m / (1.0 - b1 * b1);
        let v_hat = v / (1.0 - b2 * b2);
        let expected2 = expected1 - a * m_hat / (v_hat.sqrt() + e);
        assert!((p[0] - expected2).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = Adam::new(3, 0.05, 0.9, 0.999, 1e-8);
        let mut p = [0.3, -1.0, 2.0];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, [0.3, -1.0, 2.0]);
    }

    #[test]
    fn rmsprop_and_sgd_descend_a_quadratic() {
        for cfg in [
            OptimizerConfig::RmsProp { learning_rate: 0.01, decay: 0.9, epsilon: 1e-8 },
            OptimizerConfig::Sgd { learning_rate: 0.1 },
            OptimizerConfig::adam(0.05),
        ] {
            let mut opt = cfg.build(1);
            let mut p = [3.0];
            for _ in 0..500 {
                let g = [2.0 * p[0]];
                opt.step(&mut p, &g);
            }
            assert!(p[0].abs() < 0.1, "{cfg:?} ended at {}", p[0]);
        }
    }
}
