//! Named parameter tensors and batch-normalization buffers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rgnet_tensor::{Graph, RunningStats, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BnId(pub(crate) usize);

impl BnId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    bn_names: Vec<String>,
    bn: Vec<RunningStats<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            bn_names: Vec::new(),
            bn: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_bn(&mut self, name: impl Into<String>, channels: usize) -> BnId {
        self.bn_names.push(name.into());
        self.bn.push(RunningStats::new(channels));
        BnId(self.bn.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count over all trainable tensors.
    pub fn num_params(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn bn(&self, id: BnId) -> &RunningStats<T> {
        &self.bn[id.0]
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn bn_stats(&self) -> &[RunningStats<T>] {
        &self.bn
    }

    pub fn bn_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.bn
    }

    /// Installs running statistics queued by a training-mode forward pass.
    pub fn apply_stats_updates(&mut self, updates: Vec<(usize, RunningStats<T>)>) {
        for (slot, stats) in updates {
            self.bn[slot] = stats;
        }
    }

    /// Registers every parameter as a gradient-carrying leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.values.iter().map(|v| g.param(v.clone())).collect()
    }

    /// Same as [`ParamStore::bind`] with substitute values.
    pub fn bind_values(&self, g: &mut Graph<T>, values: &[Tensor<T>]) -> Vec<Var> {
        assert_eq!(values.len(), self.values.len());
        values.iter().map(|v| g.param(v.clone())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            bn_names: self.bn_names.clone(),
            bn: self
                .bn
                .iter()
                .map(|s| RunningStats {
                    mean: s.mean.cast(),
                    var: s.var.cast(),
                })
                .collect(),
        }
    }
}

/// Seeded weight initializer. Draws happen in `f64` so both precisions start
/// from the same values.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    pub fn he_normal<T: Scalar>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        self.normal(shape, (2.0 / fan_in as f64).sqrt())
    }

    pub fn normal<T: Scalar>(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::from_f64(dist.sample(rng)))
    }
}
