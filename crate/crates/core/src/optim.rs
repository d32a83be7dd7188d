//! Learning-rate schedule and Adam with decoupled weight decay.

use rgnet_tensor::{Scalar, Tensor, TensorError};

use crate::config::{AdamConfig, TrainConfig};
use crate::error::{config_err, Result};

/// `lr0 * (1 - epoch / epochs) ^ power`, constant within an epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(config_err(format!(
            "epoch {epoch} outside the {}-epoch schedule",
            cfg.epochs
        )));
    }
    Ok(cfg.lr0 * (1.0 - epoch as f64 / cfg.epochs as f64).powf(cfg.power))
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update followed by `theta -= wd * lr * theta`
    /// on the pre-step parameters.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        lr: f64,
        weight_decay: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        let scales = vec![1.0; params.len()];
        self.step_scaled(params, grads, lr, &scales, weight_decay, cfg)
    }

    /// As [`AdamState::step`], with tensor `i` using learning rate
    /// `lr * scales[i]`.
    pub fn step_scaled(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        lr: f64,
        scales: &[f64],
        weight_decay: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        assert_eq!(params.len(), scales.len());
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
            log::error!("non-finite gradient in parameter tensor {bad}");
            return Err(TensorError::NonFinite { op: "adam_step" }.into());
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = lr * scales[i];
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj.to_f64();
                let mj = b1 * m[j].to_f64() + (1.0 - b1) * gj;
                let vj = b2 * v[j].to_f64() + (1.0 - b2) * gj * gj;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let th = theta.to_f64();
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps) + weight_decay * lr * th;
                *theta = T::from_f64(th - update);
            }
        }
        Ok(())
    }
}
