use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::HiformerParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one flat list of leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros_for(leaves: &[&Tensor<T>]) -> Self {
        let zeros: Vec<Tensor<T>> = leaves.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn for_params(params: &HiformerParams<Tensor<T>>) -> Self {
        let leaves: Vec<&Tensor<T>> = params.leaves().into_iter().map(|(_, t)| t).collect();
        Self::zeros_for(&leaves)
    }
}

fn check_shapes<T: Scalar>(shapes: &[Vec<usize>], grads: &[Tensor<T>], state: &AdamState<T>) -> Result<(), TrainError> {
    if shapes.len() != grads.len() || shapes.len() != state.first.len() {
        return Err(TrainError::Contract(format!(
            "{} parameters, {} gradients, {} moment slots",
            shapes.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (k, (p, g)) in shapes.iter().zip(grads).enumerate() {
        if p.as_slice() != g.shape() || p.as_slice() != state.first[k].shape() {
            return Err(TrainError::Contract(format!(
                "leaf {k}: parameter {:?}, gradient {:?}",
                p,
                g.shape()
            )));
        }
    }
    Ok(())
}

struct StepScalars<T> {
    b1: T,
    b2: T,
    c1: T,
    c2: T,
    lr: T,
    eps: T,
}

impl<T: Scalar> StepScalars<T> {
    fn new(step: u64, lr: f64, cfg: &AdamConfig) -> Self {
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        Self {
            b1,
            b2,
            c1: T::one() - b1.powi(step as i32),
            c2: T::one() - b2.powi(step as i32),
            lr: T::of(lr),
            eps: T::of(cfg.eps),
        }
    }

    fn apply(&self, p: &mut Tensor<T>, g: &Tensor<T>, m: &mut Tensor<T>, v: &mut Tensor<T>) {
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, (x, &g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = self.b1 * m[i] + (T::one() - self.b1) * g;
            v[i] = self.b2 * v[i] + (T::one() - self.b2) * g * g;
            let m_hat = m[i] / self.c1;
            let v_hat = v[i] / self.c2;
            *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One bias-corrected Adam update of every leaf, in place.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    check_shapes(&shapes, grads, state)?;
    state.step += 1;
    let s = StepScalars::new(state.step, lr, cfg);
    for (k, p) in params.iter_mut().enumerate() {
        s.apply(p, &grads[k], &mut state.first[k], &mut state.second[k]);
    }
    Ok(())
}

/// Adam over a whole parameter tree; gradients follow leaf order.
pub fn adam_step_tree<T: Scalar>(
    params: &mut HiformerParams<Tensor<T>>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    let shapes: Vec<Vec<usize>> = params.leaves().iter().map(|(_, t)| t.shape().to_vec()).collect();
    check_shapes(&shapes, grads, state)?;
    state.step += 1;
    let s = StepScalars::new(state.step, lr, cfg);
    let mut k = 0;
    params.for_each_mut(|_, p| {
        s.apply(p, &grads[k], &mut state.first[k], &mut state.second[k]);
        k += 1;
    });
    Ok(())
}
