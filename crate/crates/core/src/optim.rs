//! First-order optimizers over [`ParamSet`] slots.
//!
//! All four update rules used anywhere in this crate live here: plain SGD
//! for the task trainers, Adam for the autoencoders, and Adagrad/Adadelta
//! for the robustness grids.

use serde::{Deserialize, Serialize};

use crate::numerics::{Gradients, Matrix, ParamSet};
use crate::scalar::Scalar;

/// Which optimizer to run, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adagrad { lr: f64, eps: f64 },
    Adadelta { lr: f64, rho: f64, eps: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr }
    }

    pub fn adagrad(lr: f64) -> Self {
        OptimizerKind::Adagrad { lr, eps: 1e-10 }
    }

    pub fn adadelta(rho: f64) -> Self {
        OptimizerKind::Adadelta {
            lr: 1.0,
            rho,
            eps: 1e-6,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stateful optimizer bound to the slot layout of one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    // First and second accumulators; meaning depends on the rule.
    acc1: Vec<Matrix<T>>,
    acc2: Vec<Matrix<T>>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &ParamSet<T>) -> Self {
        let zeros: Vec<Matrix<T>> = params
            .slots()
            .iter()
            .map(|s| Matrix::zeros(s.rows(), s.cols()))
            .collect();
        Self {
            kind,
            acc1: zeros.clone(),
            acc2: zeros,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Apply one update. Slots without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) {
        self.step += 1;
        for slot in 0..params.len() {
            let Some(g) = grads.slot(slot) else { continue };
            match self.kind {
                OptimizerKind::Sgd { lr } => {
                    let lr = T::from_f64(lr);
                    for (p, &gv) in params.value_mut(slot).data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * gv;
                    }
                }
                OptimizerKind::Adagrad { lr, eps } => {
                    let lr = T::from_f64(lr);
                    let eps = T::from_f64(eps);
                    let acc = self.acc1[slot].data_mut();
                    for ((p, &gv), a) in params
                        .value_mut(slot)
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(acc.iter_mut())
                    {
                        *a += gv * gv;
                        *p -= lr * gv / (a.sqrt() + eps);
                    }
                }
                OptimizerKind::Adadelta { lr, rho, eps } => {
                    let lr = T::from_f64(lr);
                    let rho = T::from_f64(rho);
                    let eps = T::from_f64(eps);
                    let one_minus = T::one() - rho;
                    let acc_g = self.acc1[slot].data_mut();
                    let acc_d = self.acc2[slot].data_mut();
                    for (((p, &gv), ag), ad) in params
                        .value_mut(slot)
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(acc_g.iter_mut())
                        .zip(acc_d.iter_mut())
                    {
                        *ag = rho * *ag + one_minus * gv * gv;
                        let delta = -((*ad + eps).sqrt() / (*ag + eps).sqrt()) * gv;
                        *ad = rho * *ad + one_minus * delta * delta;
                        *p += lr * delta;
                    }
                }
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let lr = T::from_f64(lr);
                    let b1 = T::from_f64(beta1);
                    let b2 = T::from_f64(beta2);
                    let eps = T::from_f64(eps);
                    let bias1 = T::one() - T::from_f64(beta1.powi(self.step as i32));
                    let bias2 = T::one() - T::from_f64(beta2.powi(self.step as i32));
                    let m = self.acc1[slot].data_mut();
                    let v = self.acc2[slot].data_mut();
                    for (((p, &gv), mi), vi) in params
                        .value_mut(slot)
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (T::one() - b1) * gv;
                        *vi = b2 * *vi + (T::one() - b2) * gv * gv;
                        let m_hat = *mi / bias1;
                        let v_hat = *vi / bias2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
