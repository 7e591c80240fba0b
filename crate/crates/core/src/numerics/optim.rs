use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// AdamW hyperparameters. The learning rate is supplied per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clipping; off when `None`.
    pub max_grad_norm: Option<f64>,
    /// Apply weight decay to rank-1 tensors (biases, layer-norm gains).
    pub decay_rank1: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            max_grad_norm: None,
            decay_rank1: false,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .ids()
            .map(|id| Tensor::zeros(params.get(id).shape()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &ParamStore<T>) -> bool {
        self.m.len() == params.len()
            && params
                .ids()
                .all(|id| self.m[id.0].shape() == params.get(id).shape())
    }
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// One decoupled-weight-decay Adam update.
///
/// A non-finite gradient rejects the whole step: parameters and moments are
/// left untouched.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || !state.matches(params) {
        return Err(Error::Shape {
            op: "adamw_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len()],
        });
    }
    for (id, g) in params.ids().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: params.get(id).shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }

    let cfg = state.config.clone();
    let clip = match cfg.max_grad_norm {
        Some(max) => {
            let norm = global_norm(grads);
            if norm > max {
                max / (norm + 1e-6)
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
    let (lr_t, eps) = (T::lit(lr), T::lit(cfg.eps));
    let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
    let clip = T::lit(clip);

    for i in 0..params.len() {
        let id = ParamId(i);
        let decay = if params.get(id).rank() >= 2 || cfg.decay_rank1 {
            T::lit(cfg.weight_decay)
        } else {
            T::zero()
        };
        let p = params.get_mut(id);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, pj) in p.data_mut().iter_mut().enumerate() {
            let gj = grads[i].data()[j] * clip;
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *pj -= lr_t * (mhat / (vhat.sqrt() + eps) + decay * *pj);
        }
    }
    Ok(())
}
