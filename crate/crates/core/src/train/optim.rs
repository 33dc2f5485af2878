use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSlot;
use crate::numcore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "adam_lr")]
        lr: f64,
        #[serde(default = "adam_beta1")]
        beta1: f64,
        #[serde(default = "adam_beta2")]
        beta2: f64,
        #[serde(default = "adam_epsilon")]
        epsilon: f64,
    },
}

fn adam_lr() -> f64 {
    1e-3
}
fn adam_beta1() -> f64 {
    0.9
}
fn adam_beta2() -> f64 {
    0.999
}
fn adam_epsilon() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            lr: adam_lr(),
            beta1: adam_beta1(),
            beta2: adam_beta2(),
            epsilon: adam_epsilon(),
        }
    }
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::Sgd { lr, momentum } => {
                lr >= 0.0 && lr.is_finite() && (0.0..1.0).contains(&momentum)
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
            } => {
                lr >= 0.0
                    && lr.is_finite()
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && epsilon > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// Optimizer with one or two slot buffers per parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn ensure_slots(&mut self, params: &[ParamSlot<'_>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params
                .iter()
                .map(|p| Matrix::zeros(p.param.rows(), p.param.cols()))
                .collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::Shape {
                op: "optimizer_step",
                left: (self.first.len(), 0),
                right: (params.len(), 0),
            });
        }
        for (slot, p) in self.first.iter().zip(params) {
            if slot.shape() != p.param.shape() || p.grad.shape() != p.param.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    left: slot.shape(),
                    right: p.grad.shape(),
                });
            }
        }
        Ok(())
    }

    /// Applies one update to every parameter from its accumulated gradient.
    pub fn step(&mut self, mut params: Vec<ParamSlot<'_>>) -> Result<()> {
        self.ensure_slots(&params)?;
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { lr, momentum } => {
                for (p, vel) in params.iter_mut().zip(&mut self.first) {
                    let v = vel.data_mut();
                    let w = p.param.data_mut();
                    for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(p.grad.as_slice()) {
                        *v = momentum * *v + g;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step as i32;
                let step_size = lr / (1.0 - beta1.powi(t));
                let inv_c2 = 1.0 / (1.0 - beta2.powi(t));
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let w = p.param.data_mut();
                    let m = m.data_mut();
                    let v = v.data_mut();
                    for (((w, m), v), &g) in w
                        .iter_mut()
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                        .zip(p.grad.as_slice())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= step_size * *m / ((*v * inv_c2).sqrt() + epsilon);
                    }
                }
            }
        }
        for p in &params {
            if let Some(index) = p.param.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: "optimizer_step",
                    index,
                });
            }
        }
        Ok(())
    }
}
