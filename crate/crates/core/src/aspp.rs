//! Cascaded atrous context block with dense concatenation.

use rgnet_tensor::{ConvParams, Scalar, Var};

use crate::config::AsppConfig;
use crate::error::Result;
use crate::nn::{Ctx, Norm, PreActConv};
use crate::params::{Init, ParamStore};

#[derive(Debug, Clone)]
pub struct Aspp {
    branches: Vec<PreActConv>,
    final_norm: Norm,
    out_channels: usize,
}

impl Aspp {
    /// `d` is the channel width of the incoming feature map.
    pub fn new<T: Scalar>(cfg: &AsppConfig, d: usize, store: &mut ParamStore<T>, init: &mut Init) -> Result<Self> {
        cfg.validate()?;
        let branches = cfg
            .rates
            .iter()
            .enumerate()
            .map(|(i, &rate)| {
                PreActConv::new(
                    store,
                    init,
                    &format!("aspp.branch{i}"),
                    d + i * cfg.channels,
                    cfg.channels,
                    cfg.kernel,
                    ConvParams::same(cfg.kernel, rate),
                )
            })
            .collect();
        let out_channels = cfg.output_channels(d);
        let final_norm = Norm::new(store, "aspp.final.bn", out_channels);
        Ok(Self {
            branches,
            final_norm,
            out_channels,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Branch `i` sees `x` concatenated with branches `0..i`; the output is
    /// `x` followed by every branch, batch-normalized and rectified.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut stack = x;
        for branch in &self.branches {
            let y = branch.forward(ctx, stack)?;
            stack = ctx.g.concat_channels(&[stack, y])?;
        }
        let y = self.final_norm.forward(ctx, stack)?;
        Ok(ctx.g.relu(y)?)
    }
}
