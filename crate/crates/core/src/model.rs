//! Full network assembly for every ablation variant.

use rgnet_tensor::{BnMode, ConvParams, Graph, Scalar, Tensor, Var};

use crate::aspp::Aspp;
use crate::config::{ModelConfig, ModelVariant, Task};
use crate::encoder::Encoder;
use crate::error::Result;
use crate::head::{Head, HeadOutput};
use crate::nn::{Ctx, Norm, PreActConv};
use crate::params::{Init, ParamStore};
use crate::region_graph::RegionGraph;

/// Intermediate feature maps and the head output of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Encoder output `[B, d, H, W]`.
    pub fcn: Var,
    pub aspp: Option<Var>,
    pub graph: Option<Var>,
    /// Map handed to the head.
    pub features: Var,
    pub head: HeadOutput,
}

#[derive(Debug, Clone)]
pub struct RgNet<T> {
    cfg: ModelConfig,
    store: ParamStore<T>,
    encoder: Encoder,
    aspp: Option<Aspp>,
    graph: Option<RegionGraph>,
    conv_stack: Vec<PreActConv>,
    conv_norm: Option<Norm>,
    head: Head,
    feature_channels: usize,
}

impl<T: Scalar> RgNet<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let encoder = Encoder::new(&cfg.encoder, &mut store, &mut init)?;
        let d = encoder.out_channels();
        let variant = cfg.variant;
        let mut width = d;
        let aspp = if variant.has_aspp() {
            let a = Aspp::new(&cfg.aspp, d, &mut store, &mut init)?;
            width = a.out_channels();
            Some(a)
        } else {
            None
        };
        let graph = if variant.has_graph() {
            Some(RegionGraph::new(&cfg.graph, width, &mut store, &mut init)?)
        } else {
            None
        };
        let mut conv_stack = Vec::new();
        let mut conv_norm = None;
        if variant == ModelVariant::FcnCC {
            // Same layer count and width as the context block plus graph.
            let wide = cfg.aspp.output_channels(d);
            let count = cfg.aspp.rates.len() + cfg.graph.blocks;
            for i in 0..count {
                let cin = if i == 0 { d } else { wide };
                conv_stack.push(PreActConv::new(
                    &mut store,
                    &mut init,
                    &format!("convs.layer{i}"),
                    cin,
                    wide,
                    3,
                    ConvParams::same(3, 1),
                ));
            }
            conv_norm = Some(Norm::new(&mut store, "convs.final.bn", wide));
            width = wide;
        }
        let head = if variant == ModelVariant::FcCnn {
            Head::pooled(&mut store, &mut init, width, cfg.task)
        } else {
            Head::region(&mut store, &mut init, width, cfg.head.r, cfg.task)
        };
        Ok(Self {
            cfg: cfg.clone(),
            store,
            encoder,
            aspp,
            graph,
            conv_stack,
            conv_norm,
            head,
            feature_channels: width,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn region_graph(&self) -> Option<&RegionGraph> {
        self.graph.as_ref()
    }

    /// Channel width of the map fed to the head.
    pub fn feature_channels(&self) -> usize {
        self.feature_channels
    }

    pub fn task(&self) -> Task {
        self.cfg.task
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> RgNet<U> {
        RgNet {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            aspp: self.aspp.clone(),
            graph: self.graph.clone(),
            conv_stack: self.conv_stack.clone(),
            conv_norm: self.conv_norm.clone(),
            head: self.head.clone(),
            feature_channels: self.feature_channels,
        }
    }

    /// Records the forward pass of `images` (`[B, 3, S, S]`) on `g`, with
    /// parameters bound to `vars` (see [`ParamStore::bind`]).
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], images: Var, mode: BnMode) -> Result<Forward> {
        let mut ctx = Ctx {
            g,
            vars,
            store: &self.store,
            mode,
        };
        let fcn = self.encoder.forward(&mut ctx, images)?;
        let mut x = fcn;
        let aspp = match &self.aspp {
            Some(a) => {
                x = a.forward(&mut ctx, x)?;
                Some(x)
            }
            None => None,
        };
        let graph = match &self.graph {
            Some(gr) => {
                x = gr.forward(&mut ctx, x)?;
                Some(x)
            }
            None => None,
        };
        for layer in &self.conv_stack {
            x = layer.forward(&mut ctx, x)?;
        }
        if let Some(norm) = &self.conv_norm {
            x = norm.forward(&mut ctx, x)?;
            x = ctx.g.relu(x)?;
        }
        let head = self.head.forward(&mut ctx, x)?;
        Ok(Forward {
            fcn,
            aspp,
            graph,
            features: x,
            head,
        })
    }

    /// Batch-mean loss: cross-entropy of `p(high)` when classifying, squared
    /// error of the score when regressing.
    pub fn loss(&self, g: &mut Graph<T>, prediction: Var, targets: &[f64]) -> Result<Var> {
        match self.cfg.task {
            Task::Classify => {
                let p1 = g.select_column(prediction, 1)?;
                Ok(g.bce_loss(p1, targets)?)
            }
            Task::Regress => Ok(g.mse_loss(prediction, targets)?),
        }
    }

    /// Eval-mode prediction for a batch: `[B, 2]` probabilities or `[B]` scores.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        rgnet_tensor::flush_subnormals();
        let mut g = Graph::new();
        let vars = self.store.bind(&mut g);
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, &vars, x, BnMode::Eval)?;
        Ok(g.value(out.head.prediction).clone())
    }
}
