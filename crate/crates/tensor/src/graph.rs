//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! materialized eagerly; [`Graph::backward`] replays the tape in reverse and
//! leaves `d loss / d leaf` on every gradient-carrying leaf. A graph is built
//! per batch and dropped after the optimizer step.

use crate::error::{Result, TensorError};
use crate::kernels::ConvParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-normalization running statistics for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::ones(vec![channels]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        p: ConvParams,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Transpose {
        x: usize,
    },
    Relu {
        x: usize,
        mask: Vec<bool>,
    },
    Sigmoid {
        x: usize,
    },
    Exp {
        x: usize,
    },
    Ln {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        s: T,
    },
    AddRowBias {
        x: usize,
        b: usize,
    },
    SoftmaxRows {
        x: usize,
    },
    SoftmaxChannels {
        x: usize,
    },
    ConcatChannels {
        xs: Vec<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: BnMode,
    },
    AvgPool2d {
        x: usize,
        k: usize,
        s: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    LsePool {
        x: usize,
        r: T,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    ToNodes {
        x: usize,
        item: usize,
    },
    FromNodes {
        xs: Vec<usize>,
    },
    SelectColumn {
        x: usize,
        col: usize,
    },
    PermuteRows {
        x: usize,
        perm: Vec<usize>,
    },
    Bce {
        p: usize,
        targets: Vec<T>,
        clamped: Vec<bool>,
    },
    Mse {
        pred: usize,
        targets: Vec<T>,
    },
    Reshape {
        x: usize,
    },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Exp { .. } => "exp",
            Op::Ln { .. } => "log",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddRowBias { .. } => "add_row_bias",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::SoftmaxChannels { .. } => "softmax_channels",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::BatchNorm { .. } => "batchnorm",
            Op::AvgPool2d { .. } => "avg_pool2d",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::LsePool { .. } => "lse_pool",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::ToNodes { .. } => "to_nodes",
            Op::FromNodes { .. } => "from_nodes",
            Op::SelectColumn { .. } => "select_column",
            Op::PermuteRows { .. } => "permute_rows",
            Op::Bce { .. } => "bce_loss",
            Op::Mse { .. } => "mse_loss",
            Op::Reshape { .. } => "reshape",
        }
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Deliberate corruption of one backward rule; used to prove that gradient
/// checks can fail.
#[derive(Debug, Clone, Copy)]
pub struct BackwardFault {
    pub op: &'static str,
    pub scale: f64,
}

/// Piecewise branches taken during a forward pass: one mask per ReLU and
/// one clamp-flag vector per cross-entropy, plus one permutation per row
/// sort, each in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BranchRecord {
    pub masks: Vec<Vec<bool>>,
    pub orders: Vec<Vec<usize>>,
}

/// Recording of one forward pass.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
    stats_updates: Vec<(usize, RunningStats<T>)>,
    branches: BranchRecord,
    replay: Option<BranchRecord>,
    fault: Option<BackwardFault>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            stats_updates: Vec::new(),
            branches: BranchRecord::default(),
            replay: None,
            fault: None,
        }
    }

    /// A graph whose piecewise ops follow `record` instead of their inputs:
    /// ReLUs apply the recorded masks, the cross-entropy clamps exactly the
    /// recorded entries and row sorts reuse the recorded permutations. Forward values then stay on one smooth piece, which
    /// is what finite-difference probes of a large network need.
    pub fn replaying(record: BranchRecord) -> Self {
        Self {
            replay: Some(record),
            ..Self::new()
        }
    }

    /// Gradient-carrying leaf (a parameter or a differentiable input).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Accumulated gradient of a leaf, present after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Running-statistics updates produced by training-mode batchnorm, keyed
    /// by the caller-supplied slot.
    pub fn take_stats_updates(&mut self) -> Vec<(usize, RunningStats<T>)> {
        std::mem::take(&mut self.stats_updates)
    }

    pub(crate) fn push_stats_update(&mut self, slot: usize, stats: RunningStats<T>) {
        self.stats_updates.push((slot, stats));
    }

    /// Branches taken so far.
    pub fn branch_record(&self) -> &BranchRecord {
        &self.branches
    }

    /// Records the branch vector of the next piecewise op, substituting the
    /// replayed one when replaying.
    pub(crate) fn next_branch(&mut self, op: &'static str, computed: Vec<bool>) -> Result<Vec<bool>> {
        let mask = match &self.replay {
            Some(rec) => {
                let k = self.branches.masks.len();
                match rec.masks.get(k) {
                    Some(m) if m.len() == computed.len() => m.clone(),
                    _ => {
                        return Err(TensorError::InvalidArgument {
                            op,
                            detail: format!("replayed branch record has no entry {k} of length {}", computed.len()),
                        })
                    }
                }
            }
            None => computed,
        };
        self.branches.masks.push(mask.clone());
        Ok(mask)
    }

    /// [`Graph::next_branch`] for permutations.
    pub(crate) fn next_order(&mut self, op: &'static str, computed: Vec<usize>) -> Result<Vec<usize>> {
        let order = match &self.replay {
            Some(rec) => {
                let k = self.branches.orders.len();
                match rec.orders.get(k) {
                    Some(o) if o.len() == computed.len() => o.clone(),
                    _ => {
                        return Err(TensorError::InvalidArgument {
                            op,
                            detail: format!("replayed branch record has no order {k} of length {}", computed.len()),
                        })
                    }
                }
            }
            None => computed,
        };
        self.branches.orders.push(order.clone());
        Ok(order)
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an op output, rejecting non-finite values.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.shape().to_vec(), T::ONE));
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize_with(self.nodes.len(), || None);
        }

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.add_assign(&gout),
                    slot => *slot = Some(gout),
                }
                continue;
            }
            let mut contributions = self.backward_node(id, &gout)?;
            if let Some(fault) = self.fault {
                if fault.op == self.nodes[id].op.name() {
                    let s = T::from_f64(fault.scale);
                    for (_, g) in contributions.iter_mut() {
                        g.data_mut().iter_mut().for_each(|v| *v *= s);
                    }
                }
            }
            for (input, g) in contributions {
                if !g.all_finite() {
                    return Err(TensorError::NonFinite {
                        op: self.nodes[id].op.name(),
                    });
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
