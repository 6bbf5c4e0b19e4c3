use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::param::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    /// Classical momentum: `v = mu v - lr g; theta += v`.
    Sgd { momentum: f64 },
    /// `ms = rho ms + (1 - rho) g^2`; step `lr g / (sqrt(ms) + eps)`, optionally
    /// accumulated into a momentum buffer.
    RmsProp { rho: f64, momentum: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam(beta1: f64, beta2: f64) -> Self {
        OptimizerKind::Adam { beta1, beta2, epsilon: 1e-7 }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    first: Array2<f64>,
    second: Array2<f64>,
}

/// Optimizer with per-parameter moment buffers. Buffers are created on the
/// first step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    slots: Vec<Slot>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            slots: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        let shapes_match = self.slots.len() == params.len()
            && self.slots.iter().zip(params.iter()).all(|(s, p)| s.first.dim() == p.value.dim());
        if !shapes_match {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    first: Array2::zeros(p.value.raw_dim()),
                    second: Array2::zeros(p.value.raw_dim()),
                })
                .collect();
        }
        self.steps += 1;
        let t = self.steps as f64;
        for (p, slot) in params.iter_mut().zip(self.slots.iter_mut()) {
            let p: &mut Param = p;
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, epsilon } => {
                    let c1 = 1.0 - beta1.powf(t);
                    let c2 = 1.0 - beta2.powf(t);
                    Zip::from(&mut p.value)
                        .and(&p.grad)
                        .and(&mut slot.first)
                        .and(&mut slot.second)
                        .for_each(|w, &g, m, v| {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let m_hat = *m / c1;
                            let v_hat = *v / c2;
                            *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
                        });
                }
                OptimizerKind::Sgd { momentum } => {
                    Zip::from(&mut p.value)
                        .and(&p.grad)
                        .and(&mut slot.first)
                        .for_each(|w, &g, vel| {
                            *vel = momentum * *vel - lr * g;
                            *w += *vel;
                        });
                }
                OptimizerKind::RmsProp { rho, momentum, epsilon } => {
                    Zip::from(&mut p.value)
                        .and(&p.grad)
                        .and(&mut slot.first)
                        .and(&mut slot.second)
                        .for_each(|w, &g, mom, ms| {
                            *ms = rho * *ms + (1.0 - rho) * g * g;
                            let inc = lr * g / (ms.sqrt() + epsilon);
                            if momentum > 0.0 {
                                *mom = momentum * *mom + inc;
                                *w -= *mom;
                            } else {
                                *w -= inc;
                            }
                        });
                }
            }
        }
    }
}
