//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::tensor::Tensor;

/// Settings for [`check_gradients`].
#[derive(Debug, Clone)]
pub struct FdConfig {
    /// Perturbation `h` in `(f(x+h) - f(x-h)) / 2h`.
    pub step: f64,
    /// Coordinates checked per tensor (all of them when the tensor is smaller).
    pub samples: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            samples: 20,
            seed: 0,
        }
    }
}

/// Result for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Gradients smaller than this in both routes are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Compares `analytic[i]` against central differences of `eval` with respect
/// to `params[i]` on sampled coordinates.
///
/// `eval` maps a full parameter set to the loss. For piecewise-smooth
/// networks it should evaluate on the branches of the unperturbed point (see
/// [`Graph::replaying`](crate::Graph::replaying)).
pub fn check_gradients<F>(
    params: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    names: &[String],
    cfg: &FdConfig,
    mut eval: F,
) -> Result<Vec<TensorCheck>>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    assert_eq!(params.len(), analytic.len());
    assert_eq!(params.len(), names.len());
    let mut rng = SplitMix(cfg.seed);
    let mut report = Vec::with_capacity(params.len());
    for ti in 0..params.len() {
        let numel = params[ti].numel();
        let mut candidates: Vec<usize> = (0..numel).collect();
        // Fisher-Yates so each tensor sees a fixed random coordinate order.
        for i in (1..numel).rev() {
            let j = (rng.next() % (i as u64 + 1)) as usize;
            candidates.swap(i, j);
        }
        let mut entry = TensorCheck {
            name: names[ti].clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &idx in candidates.iter().take(cfg.samples) {
            let orig = params[ti].data()[idx];
            params[ti].data_mut()[idx] = orig + cfg.step;
            let plus = eval(params);
            params[ti].data_mut()[idx] = orig - cfg.step;
            let minus = eval(params);
            params[ti].data_mut()[idx] = orig;
            let (fp, fm) = (plus?, minus?);
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic[ti].data()[idx];
            let err = relative_error(a, numeric);
            if err >= entry.max_rel_error {
                entry.max_rel_error = err;
                entry.worst_index = idx;
                entry.worst_analytic = a;
                entry.worst_numeric = numeric;
            }
            entry.checked += 1;
        }
        report.push(entry);
    }
    Ok(report)
}
