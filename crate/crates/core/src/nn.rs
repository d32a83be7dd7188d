//! Building blocks shared by the encoder, context block and heads.

use rgnet_tensor::{BnMode, ConvParams, Graph, Scalar, Tensor, Var};

use crate::error::Result;
use crate::params::{BnId, Init, ParamId, ParamStore};

/// Forward-pass context: the tape, the bound parameter leaves and the store
/// holding batch-normalization buffers.
pub struct Ctx<'a, T: Scalar> {
    pub g: &'a mut Graph<T>,
    pub vars: &'a [Var],
    pub store: &'a ParamStore<T>,
    pub mode: BnMode,
}

impl<T: Scalar> Ctx<'_, T> {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub params: ConvParams,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        params: ConvParams,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init.he_normal(vec![cout, cin, kernel, kernel], cin * kernel * kernel),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Self { weight, bias, params }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), ctx.var(self.bias));
        Ok(ctx.g.conv2d(x, w, Some(b), self.params)?)
    }

    pub fn out_channels<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.weight).shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BnId,
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(vec![channels]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        let stats = store.add_bn(name, channels);
        Self { gamma, beta, stats }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        let stats = ctx.store.bn(self.stats);
        Ok(ctx.g.batchnorm(x, gamma, beta, stats, ctx.mode, self.stats.index())?)
    }
}

/// BN, ReLU, then convolution.
#[derive(Debug, Clone)]
pub struct PreActConv {
    pub norm: Norm,
    pub conv: Conv,
}

impl PreActConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        params: ConvParams,
    ) -> Self {
        let norm = Norm::new(store, &format!("{name}.bn"), cin);
        let conv = Conv::new(store, init, &format!("{name}.conv"), cin, cout, kernel, params);
        Self { norm, conv }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm.forward(ctx, x)?;
        let h = ctx.g.relu(h)?;
        self.conv.forward(ctx, h)
    }
}

/// `x W + b` on `[B, in]` rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, name: &str, din: usize, dout: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), init.he_normal(vec![din, dout], din));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![dout]));
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), ctx.var(self.bias));
        let y = ctx.g.matmul(x, w)?;
        Ok(ctx.g.add_row_bias(y, b)?)
    }
}
