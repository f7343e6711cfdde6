//! AdamW with the AMSGrad extension, global-norm gradient clipping and a
//! reduce-on-plateau learning-rate schedule.

use super::params::ParamStore;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// Per-parameter moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub v_max: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", config.lr)));
        }
        Ok(Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            v_max: params.zeros_like(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One decoupled-weight-decay AMSGrad update.
pub fn adamw_amsgrad_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adamw",
            format!("{} params, {} grads, {} moment buffers", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensor(i).shape() {
            return Err(Error::shape(
                "adamw",
                format!("gradient for {} has shape {:?}", params.name(i), g.shape()),
            ));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite {
                op: format!("gradient of {}", params.name(i)),
            });
        }
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2_sqrt = (1.0 - c.beta2.powi(t)).sqrt();
    let decay = T::of(1.0 - c.lr * c.weight_decay);
    let step_size = T::of(c.lr / bc1);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let inv_bc2 = T::of(1.0 / bc2_sqrt);
    let eps = T::of(c.eps);
    for (i, g) in grads.iter().enumerate() {
        let p = params.tensor_mut(i).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let vm = state.v_max[i].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            p[j] *= decay;
            m[j] = b1 * m[j] + ob1 * gj;
            v[j] = b2 * v[j] + ob2 * gj * gj;
            vm[j] = vm[j].max(v[j]);
            let denom = vm[j].sqrt() * inv_bc2 + eps;
            p[j] -= step_size * m[j] / denom;
        }
    }
    Ok(())
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_l2<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid("max_norm must be positive"));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite { op: "gradient norm".into() });
    }
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(norm)
}

/// Multiplies the learning rate by `factor` once the monitored metric
/// has gone more than `patience` epochs without a strict decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub current_lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub best_metric: f64,
    pub epochs_since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Result<Self> {
        if !(lr > 0.0) || !(factor > 0.0 && factor < 1.0) {
            return Err(Error::invalid(format!("invalid scheduler lr={lr} factor={factor}")));
        }
        Ok(Self {
            current_lr: lr,
            factor,
            patience,
            best_metric: f64::INFINITY,
            epochs_since_improvement: 0,
        })
    }

    /// Records one epoch's validation metric (lower is better) and returns
    /// the learning rate to use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best_metric {
            self.best_metric = metric;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement > self.patience {
                self.current_lr *= self.factor;
                self.epochs_since_improvement = 0;
            }
        }
        self.current_lr
    }
}
