//! End-to-end gradient verification of a model in `f64`.

use rgnet_tensor::gradcheck::{check_gradients, FdConfig, TensorCheck};
use rgnet_tensor::{BackwardFault, BnMode, Graph, Tensor, TensorError};

use crate::error::{Error, Result};
use crate::model::RgNet;

/// Maximum relative error accepted for every parameter tensor.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checks: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares backpropagated gradients of the loss against central
/// differences for every parameter tensor. `mode` selects batch statistics
/// (`Train`) or the running buffers (`Eval`) in every batchnorm; `fault`
/// corrupts one backward rule of the analytic pass.
pub fn gradcheck_model(
    model: &RgNet<f64>,
    images: &Tensor<f64>,
    targets: &[f64],
    mode: BnMode,
    cfg: &FdConfig,
    fault: Option<BackwardFault>,
) -> Result<GradReport> {
    let mut g = Graph::new();
    if let Some(f) = fault {
        g.inject_fault(f);
    }
    let vars = model.store().bind(&mut g);
    let x = g.constant(images.clone());
    let out = model.forward(&mut g, &vars, x, mode)?;
    let loss = model.loss(&mut g, out.head.prediction, targets)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(model.store().values())
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    let record = g.branch_record().clone();
    drop(g);

    let mut params = model.store().values().to_vec();
    let names = model.store().names().to_vec();
    let checks = check_gradients(&mut params, &analytic, &names, cfg, |values| {
        let eval = || -> Result<f64> {
            let mut g = Graph::replaying(record.clone());
            let vars = model.store().bind_values(&mut g, values);
            let x = g.constant(images.clone());
            let out = model.forward(&mut g, &vars, x, mode)?;
            let loss = model.loss(&mut g, out.head.prediction, targets)?;
            Ok(g.value(loss).item())
        };
        eval().map_err(|e| match e {
            Error::Tensor(t) => t,
            other => TensorError::InvalidArgument {
                op: "gradcheck",
                detail: other.to_string(),
            },
        })
    })?;
    Ok(GradReport {
        checks,
        tolerance: GRAD_TOLERANCE,
    })
}
