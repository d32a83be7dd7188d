//! Per-region scoring and image-level aggregation.

use rgnet_tensor::{ConvParams, Graph, Scalar, Tensor, TensorError, Var};

use crate::config::Task;
use crate::error::Result;
use crate::nn::{Conv, Ctx, Linear};
use crate::params::{Init, ParamStore};

/// 1x1 convolution to two channels and a softmax over classes at every
/// location. Class 0 is low aesthetics, class 1 high.
pub fn region_scores<T: Scalar>(g: &mut Graph<T>, features: Var, kernel: Var, bias: Var) -> Result<Var> {
    let logits = g.conv2d(features, kernel, Some(bias), ConvParams::new(1, 1, 0))?;
    Ok(g.softmax_channels(logits)?)
}

/// Log-sum-exp pooling of one score map, `(1/r) ln(mean exp(r y))`.
pub fn lse_aggregate(values: &[f64], r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(TensorError::InvalidArgument {
            op: "lse_aggregate",
            detail: format!("r must be positive, got {r}"),
        }
        .into());
    }
    if values.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "lse_aggregate",
            detail: "empty score map".into(),
        }
        .into());
    }
    let m = values.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(r * v));
    let mean = values.iter().map(|&v| (r * v - m).exp()).sum::<f64>() / values.len() as f64;
    Ok((m + mean.ln()) / r)
}

/// Two-way softmax over the aggregated class scores.
pub fn image_probabilities(y0: f64, y1: f64) -> (f64, f64) {
    let m = y0.max(y1);
    let (e0, e1) = ((y0 - m).exp(), (y1 - m).exp());
    (e0 / (e0 + e1), e1 / (e0 + e1))
}

/// High (1) only when strictly more probable; ties go to low (0).
pub fn classify(p0: f64, p1: f64) -> u8 {
    u8::from(p1 > p0)
}

/// Single-channel 1x1 convolution, sigmoid, LSE pooling: one score per image.
pub fn regress_score<T: Scalar>(g: &mut Graph<T>, features: Var, kernel: Var, bias: Var, r: f64) -> Result<Var> {
    let logits = g.conv2d(features, kernel, Some(bias), ConvParams::new(1, 1, 0))?;
    let s = g.sigmoid(logits)?;
    let pooled = g.lse_pool(s, r)?;
    Ok(g.select_column(pooled, 0)?)
}

/// Output of a head on a batch.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// Per-location scores `[B, K, H, W]` (absent for the pooled FC head).
    pub region_scores: Option<Var>,
    /// Class probabilities `[B, 2]` when classifying, scores `[B]` when regressing.
    pub prediction: Var,
}

#[derive(Debug, Clone)]
pub enum Head {
    /// Fully convolutional head with LSE aggregation.
    Region { conv: Conv, r: f64, task: Task },
    /// Global average pooling followed by a linear classifier.
    Pooled { linear: Linear, task: Task },
}

impl Head {
    pub fn region<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, d: usize, r: f64, task: Task) -> Self {
        let k = match task {
            Task::Classify => 2,
            Task::Regress => 1,
        };
        let conv = Conv::new(store, init, "head", d, k, 1, ConvParams::new(1, 1, 0));
        Head::Region { conv, r, task }
    }

    pub fn pooled<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, d: usize, task: Task) -> Self {
        let k = match task {
            Task::Classify => 2,
            Task::Regress => 1,
        };
        Head::Pooled {
            linear: Linear::new(store, init, "head.fc", d, k),
            task,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, features: Var) -> Result<HeadOutput> {
        match self {
            Head::Region { conv, r, task } => {
                let (w, b) = (ctx.var(conv.weight), ctx.var(conv.bias));
                match task {
                    Task::Classify => {
                        let y = region_scores(ctx.g, features, w, b)?;
                        let pooled = ctx.g.lse_pool(y, *r)?;
                        let p = ctx.g.softmax_rows(pooled)?;
                        Ok(HeadOutput {
                            region_scores: Some(y),
                            prediction: p,
                        })
                    }
                    Task::Regress => {
                        let logits = ctx.g.conv2d(features, w, Some(b), ConvParams::new(1, 1, 0))?;
                        let y = ctx.g.sigmoid(logits)?;
                        let pooled = ctx.g.lse_pool(y, *r)?;
                        let s = ctx.g.select_column(pooled, 0)?;
                        Ok(HeadOutput {
                            region_scores: Some(y),
                            prediction: s,
                        })
                    }
                }
            }
            Head::Pooled { linear, task } => {
                let pooled = ctx.g.global_avg_pool(features)?;
                let logits = linear.forward(ctx, pooled)?;
                let prediction = match task {
                    Task::Classify => ctx.g.softmax_rows(logits)?,
                    Task::Regress => {
                        let s = ctx.g.sigmoid(logits)?;
                        ctx.g.select_column(s, 0)?
                    }
                };
                Ok(HeadOutput {
                    region_scores: None,
                    prediction,
                })
            }
        }
    }
}

/// Per-image `(p_low, p_high)` from a `[B, 2]` probability tensor.
pub fn probability_pairs<T: Scalar>(p: &Tensor<T>) -> Vec<(f64, f64)> {
    p.data().chunks(2).map(|c| (c[0].to_f64(), c[1].to_f64())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_worked_values() {
        assert!((lse_aggregate(&[0.7; 9], 3.0).unwrap() - 0.7).abs() < 1e-12);
        let v = lse_aggregate(&[0.0, 1.0], 4.0).unwrap();
        let direct = ((1.0 + 4f64.exp()) / 2.0).ln() / 4.0;
        assert!((v - direct).abs() < 1e-14);
        assert!((v - 0.83125).abs() < 1e-5);
        assert!(lse_aggregate(&[1.0], 0.0).is_err());
        assert!(lse_aggregate(&[1.0], -1.0).is_err());
    }

    #[test]
    fn probabilities_and_labels() {
        assert_eq!(image_probabilities(0.3, 0.3), (0.5, 0.5));
        let (p0, p1) = image_probabilities(0.0, 3f64.ln());
        assert!((p0 - 0.25).abs() < 1e-15 && (p1 - 0.75).abs() < 1e-15);
        let (q0, q1) = image_probabilities(10.0, 10.0 + 3f64.ln());
        assert!((q0 - p0).abs() < 1e-9 && (q1 - p1).abs() < 1e-9);
        assert_eq!(classify(0.3, 0.7), 1);
        assert_eq!(classify(0.7, 0.3), 0);
        assert_eq!(classify(0.5, 0.5), 0);
    }
}
