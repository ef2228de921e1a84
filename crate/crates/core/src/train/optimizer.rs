use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Parameter(format!("unknown optimizer {s:?}; expected sgd_momentum or adam"))),
        }
    }
}

/// Optimizer state, one slot per parameter tensor in network order.
#[derive(Clone, Debug)]
pub enum Optimizer<T: Scalar> {
    /// `v <- mu * v - lr * g; p <- p + v`
    Sgd {
        lr: f64,
        momentum: f64,
        velocity: Vec<Vec<T>>,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Vec<T>>,
        v: Vec<Vec<T>>,
    },
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Optimizer::Sgd { lr, momentum, velocity: Vec::new() }
    }

    /// Adam with beta1 0.9, beta2 0.999, eps 1e-7.
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-7, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn new(kind: OptimizerKind, lr: f64, momentum: f64) -> Self {
        match kind {
            OptimizerKind::SgdMomentum => Self::sgd(lr, momentum),
            OptimizerKind::Adam => Self::adam(lr),
        }
    }

    fn ensure_state(slots: &mut Vec<Vec<T>>, params: &[&mut Tensor<T>]) -> Result<()> {
        if slots.is_empty() {
            *slots = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        if slots.len() != params.len() {
            return Err(Error::Contract(format!("optimizer tracks {} tensors, got {}", slots.len(), params.len())));
        }
        Ok(())
    }

    /// Applies one update. `grads[i]` must match `params[i]` in shape.
    pub fn step(&mut self, mut params: Vec<&mut Tensor<T>>, grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!("{} parameter tensors but {} gradients", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer gradient", p.shape(), g.shape()));
            }
        }
        match self {
            Optimizer::Sgd { lr, momentum, velocity } => {
                Self::ensure_state(velocity, &params)?;
                let (lr, mu) = (T::from_f64_lossy(*lr), T::from_f64_lossy(*momentum));
                for ((p, g), vel) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                    for ((pv, &gv), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel.iter_mut()) {
                        *v = mu * *v - lr * gv;
                        *pv += *v;
                    }
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps, step, m, v } => {
                Self::ensure_state(m, &params)?;
                Self::ensure_state(v, &params)?;
                *step += 1;
                let t = *step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (T::from_f64_lossy(*beta1), T::from_f64_lossy(*beta2));
                let (one, lr, eps) = (T::one(), T::from_f64_lossy(*lr), T::from_f64_lossy(*eps));
                let (c1, c2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
                for (((p, g), ms), vs) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((pv, &gv), mv), vv) in
                        p.data_mut().iter_mut().zip(g.data()).zip(ms.iter_mut()).zip(vs.iter_mut())
                    {
                        *mv = b1 * *mv + (one - b1) * gv;
                        *vv = b2 * *vv + (one - b2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
