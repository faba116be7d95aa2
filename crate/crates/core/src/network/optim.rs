use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// One trainable tensor and its gradient. `decay` selects whether weight
/// decay applies to it.
pub struct Param<'a, T> {
    pub value: ArrayViewMutD<'a, T>,
    pub grad: ArrayViewD<'a, T>,
    pub decay: bool,
}

/// SGD or Adam with L2 weight decay folded into the gradient.
///
/// Adam moments are allocated on the first step and matched to parameters by
/// position, so callers must pass parameters in the same order every step.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: u64,
    first_moments: Vec<ArrayD<T>>,
    second_moments: Vec<ArrayD<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, learning_rate: T, weight_decay: T) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < T::zero() {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if !weight_decay.is_finite() || weight_decay < T::zero() {
            return Err(Error::invalid("weight_decay", "must be finite and >= 0"));
        }
        Ok(Self {
            kind,
            learning_rate,
            weight_decay,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            step: 0,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Param<'_, T>]) -> Result<()> {
        for p in params.iter() {
            if p.value.shape() != p.grad.shape() {
                return Err(Error::ShapeMismatch {
                    context: "parameter vs gradient",
                    expected: p.value.len(),
                    found: p.grad.len(),
                });
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let wd = if p.decay { self.weight_decay } else { T::zero() };
                    Zip::from(&mut p.value).and(&p.grad).for_each(|w, &g| {
                        *w -= lr * (g + wd * *w);
                    });
                }
            }
            OptimizerKind::Adam => {
                if self.first_moments.is_empty() {
                    self.first_moments = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
                    self.second_moments = self.first_moments.clone();
                }
                check_len("optimizer slots", self.first_moments.len(), params.len())?;
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let t = i32::try_from(self.step).unwrap_or(i32::MAX);
                let correction1 = T::one() - b1.powi(t);
                let correction2 = T::one() - b2.powi(t);
                for ((p, m), v) in params
                    .iter_mut()
                    .zip(&mut self.first_moments)
                    .zip(&mut self.second_moments)
                {
                    if m.shape() != p.value.shape() {
                        return Err(Error::ShapeMismatch {
                            context: "optimizer slot",
                            expected: m.len(),
                            found: p.value.len(),
                        });
                    }
                    let wd = if p.decay { self.weight_decay } else { T::zero() };
                    Zip::from(&mut p.value)
                        .and(&p.grad)
                        .and(m)
                        .and(v)
                        .for_each(|w, &g, m, v| {
                            let g = g + wd * *w;
                            *m = b1 * *m + (T::one() - b1) * g;
                            *v = b2 * *v + (T::one() - b2) * g * g;
                            let m_hat = *m / correction1;
                            let v_hat = *v / correction2;
                            *w -= lr * m_hat / (v_hat.sqrt() + eps);
                        });
                }
            }
        }
        Ok(())
    }
}
