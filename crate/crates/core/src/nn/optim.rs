use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop { alpha: f64, eps: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn rmsprop() -> Self {
        OptimizerKind::Rmsprop { alpha: 0.99, eps: 1e-8 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Rmsprop { .. } => "rmsprop",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

/// Optimizer hyperparameters plus per-parameter running moments.
///
/// RMSprop keeps one accumulator (`sq`) per parameter, Adam keeps `m` and `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    /// `{param}/{moment}` → buffer.
    pub accum: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            accum: BTreeMap::new(),
        }
    }

    fn moment<'a>(accum: &'a mut BTreeMap<String, Vec<f64>>, name: &str, which: &str, len: usize) -> &'a mut Vec<f64> {
        accum
            .entry(format!("{name}/{which}"))
            .or_insert_with(|| vec![0.0; len])
    }

    /// Applies one update to every parameter. Gradients are left untouched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(Error::State(format!("parameter `{name}` has no gradient buffer")));
            }
        }
        self.step += 1;
        let lr = self.lr;
        let t = self.step as f64;
        for (name, tensor) in params.iter_mut() {
            let n = tensor.numel();
            let (data, grad) = tensor.parts_mut();
            let grad = grad.expect("checked above");
            match self.kind {
                OptimizerKind::Rmsprop { alpha, eps } => {
                    let sq = Self::moment(&mut self.accum, name, "sq", n);
                    for ((p, g), s) in data.iter_mut().zip(grad.iter()).zip(sq.iter_mut()) {
                        *s = alpha * *s + (1.0 - alpha) * g * g;
                        *p -= lr * g / (s.sqrt() + eps);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powf(t);
                    let bc2 = 1.0 - beta2.powf(t);
                    // Two separate moment buffers; take them out to satisfy the borrow checker.
                    let mut m = std::mem::take(Self::moment(&mut self.accum, name, "m", n));
                    let v = Self::moment(&mut self.accum, name, "v", n);
                    for (((p, g), mi), vi) in data.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                    *Self::moment(&mut self.accum, name, "m", n) = m;
                }
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule with a strict `<` improvement test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::param("factor", format!("{factor} is not in (0, 1)")));
        }
        Ok(Self {
            patience,
            factor,
            best: None,
            bad_epochs: 0,
        })
    }

    /// Records one epoch loss and returns the (possibly reduced) learning rate.
    pub fn step(&mut self, epoch_loss: f64, lr: f64) -> f64 {
        match self.best {
            Some(best) if epoch_loss >= best => {
                self.bad_epochs += 1;
            }
            _ => {
                self.best = Some(epoch_loss);
                self.bad_epochs = 0;
            }
        }
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}
