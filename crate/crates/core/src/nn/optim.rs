use super::network::{Gradients, Network};
use crate::{Error, Result};

/// Update rule and its constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { decay: f64, eps: f64 },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub const fn rmsprop() -> Self {
        OptimizerKind::RmsProp {
            decay: 0.99,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment accumulators for one network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            kind,
            lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn adam(lr: f64, net: &Network) -> Self {
        Self::new(OptimizerKind::adam(), lr, net)
    }

    pub fn rmsprop(lr: f64, net: &Network) -> Self {
        Self::new(OptimizerKind::rmsprop(), lr, net)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Applies one update to `net` from `grads`.
    ///
    /// Non-finite gradients abort the step before any parameter is touched.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let mut params = net.params_mut();
        if params.len() != grads.0.len() || params.len() != self.second.len() {
            return Err(Error::Dimension {
                context: "optimizer parameter groups",
                expected: params.len(),
                got: grads.0.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(&grads.0).enumerate() {
            if p.len() != g.len() {
                return Err(Error::Dimension {
                    context: "optimizer gradient",
                    expected: p.len(),
                    got: g.len(),
                });
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {i} element {bad} is {}",
                    g[bad]
                )));
            }
        }
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
                let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&grads.0)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pv, &gv), mv), vv) in
                        p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::RmsProp { decay, eps } => {
                for ((p, g), v) in params.iter_mut().zip(&grads.0).zip(&mut self.second) {
                    for ((pv, &gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vv = decay * *vv + (1.0 - decay) * gv * gv;
                        *pv -= lr * gv / (vv.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
