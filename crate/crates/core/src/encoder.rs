//! Dilated densely connected encoder with output stride 8.
//!
//! Layout: strided stem convolution, 2x2 average pool, then dense blocks
//! separated by 1x1 transitions. Pooling transitions halve the grid; the
//! pool-free ones hand over to dilated blocks instead. A final BN + ReLU
//! closes the encoder.

use rgnet_tensor::{BnMode, ConvParams, Graph, Scalar, Tensor, Var};

use crate::config::{EncoderConfig, MIN_INPUT_SIDE};
use crate::error::{Error, Result};
use crate::nn::{Conv, Ctx, Norm, PreActConv};
use crate::params::{Init, ParamStore};

#[derive(Debug, Clone)]
struct DenseBlock {
    layers: Vec<PreActConv>,
}

#[derive(Debug, Clone)]
struct Transition {
    conv: PreActConv,
    pool: bool,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    stem: Conv,
    blocks: Vec<DenseBlock>,
    transitions: Vec<Transition>,
    final_norm: Norm,
    out_channels: usize,
}

/// Spatial side after the stem, the fixed pool and every pooling transition.
pub fn output_side(cfg: &EncoderConfig, side: usize) -> usize {
    let pad = cfg.stem_kernel / 2;
    let stem = ConvParams::new(2, 1, pad).out_extent(side, cfg.stem_kernel).unwrap_or(0);
    let mut s = stem / 2;
    for &pool in &cfg.downsample_stages {
        if pool {
            s /= 2;
        }
    }
    s
}

/// Channel width `d` of the encoder output.
pub fn output_channels(cfg: &EncoderConfig) -> usize {
    let mut c = cfg.stem_channels;
    for (i, b) in cfg.dense_blocks.iter().enumerate() {
        c += b.layers * b.growth_rate;
        if i + 1 < cfg.dense_blocks.len() {
            c = transition_width(c, cfg.transition_compression);
        }
    }
    c
}

fn transition_width(c: usize, compression: f64) -> usize {
    ((c as f64 * compression).floor() as usize).max(1)
}

impl Encoder {
    pub fn new<T: Scalar>(cfg: &EncoderConfig, store: &mut ParamStore<T>, init: &mut Init) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::build_unchecked(cfg, store, init))
    }

    /// Builds without the stride and dilation rules, so experiments can
    /// compare against an undilated ladder.
    pub(crate) fn build_unchecked<T: Scalar>(cfg: &EncoderConfig, store: &mut ParamStore<T>, init: &mut Init) -> Self {
        let k = cfg.stem_kernel;
        let stem = Conv::new(
            store,
            init,
            "encoder.stem",
            3,
            cfg.stem_channels,
            k,
            ConvParams::new(2, 1, k / 2),
        );
        let mut c = cfg.stem_channels;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (i, spec) in cfg.dense_blocks.iter().enumerate() {
            let dil = cfg.dilation_ladder.get(i).copied().unwrap_or(1);
            let layers = (0..spec.layers)
                .map(|j| {
                    PreActConv::new(
                        store,
                        init,
                        &format!("encoder.block{i}.layer{j}"),
                        c + j * spec.growth_rate,
                        spec.growth_rate,
                        3,
                        ConvParams::same(3, dil),
                    )
                })
                .collect();
            blocks.push(DenseBlock { layers });
            c += spec.layers * spec.growth_rate;
            if i + 1 < cfg.dense_blocks.len() {
                let out = transition_width(c, cfg.transition_compression);
                let conv = PreActConv::new(
                    store,
                    init,
                    &format!("encoder.transition{i}"),
                    c,
                    out,
                    1,
                    ConvParams::new(1, 1, 0),
                );
                let pool = cfg.downsample_stages.get(i).copied().unwrap_or(false);
                transitions.push(Transition { conv, pool });
                c = out;
            }
        }
        let final_norm = Norm::new(store, "encoder.final.bn", c);
        Self {
            stem,
            blocks,
            transitions,
            final_norm,
            out_channels: c,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// `images` is `[B, 3, S, S]`; the result is `[B, d, S', S']`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, images: Var) -> Result<Var> {
        self.forward_with(ctx, images, None)
    }

    /// `zeroed = (block, layer)` replaces that dense layer's output by zeros.
    pub(crate) fn forward_with<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        images: Var,
        zeroed: Option<(usize, usize)>,
    ) -> Result<Var> {
        let shape = ctx.g.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::InputTooSmall(format!("expected [B, 3, S, S] images, got {shape:?}")));
        }
        let side = shape[2].min(shape[3]);
        if side < MIN_INPUT_SIDE {
            return Err(Error::InputTooSmall(format!(
                "input side {side} is below {MIN_INPUT_SIDE}"
            )));
        }
        let mut x = self.stem.forward(ctx, images)?;
        x = ctx.g.avg_pool2d(x, 2, 2)?;
        for (i, block) in self.blocks.iter().enumerate() {
            let mut feats = x;
            for (j, layer) in block.layers.iter().enumerate() {
                let mut y = layer.forward(ctx, feats)?;
                if zeroed == Some((i, j)) {
                    y = ctx.g.scale(y, 0.0)?;
                }
                feats = ctx.g.concat_channels(&[feats, y])?;
            }
            x = feats;
            if let Some(t) = self.transitions.get(i) {
                x = t.conv.forward(ctx, x)?;
                if t.pool {
                    x = ctx.g.avg_pool2d(x, 2, 2)?;
                }
            }
        }
        let x = self.final_norm.forward(ctx, x)?;
        let x = ctx.g.relu(x)?;
        let s = ctx.g.shape(x);
        if s[2] < 4 || s[3] < 4 {
            return Err(Error::InputTooSmall(format!(
                "feature grid {}x{} is below 4x4",
                s[2], s[3]
            )));
        }
        Ok(x)
    }
}

/// Builds a standalone encoder with its own parameter store.
pub fn build_encoder<T: Scalar>(cfg: &EncoderConfig, seed: u64) -> Result<(Encoder, ParamStore<T>)> {
    let mut store = ParamStore::new();
    let enc = Encoder::new(cfg, &mut store, &mut Init::new(seed))?;
    Ok((enc, store))
}

/// Runs a standalone encoder on a batch and returns the feature map.
pub fn encode<T: Scalar>(enc: &Encoder, store: &ParamStore<T>, images: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars = store.bind(&mut g);
    let x = g.constant(images.clone());
    let mut ctx = Ctx {
        g: &mut g,
        vars: &vars,
        store,
        mode,
    };
    let y = enc.forward(&mut ctx, x)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DenseBlockSpec;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            stem_channels: 4,
            dense_blocks: vec![DenseBlockSpec { layers: 2, growth_rate: 3 }; 4],
            ..EncoderConfig::default()
        }
    }

    fn image(side: usize, seed: u64) -> Tensor<f64> {
        let mut init = Init::new(seed);
        init.normal(vec![1, 3, side, side], 1.0)
    }

    fn run(enc: &Encoder, store: &ParamStore<f64>, img: &Tensor<f64>, zeroed: Option<(usize, usize)>) -> Tensor<f64> {
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let x = g.constant(img.clone());
        let mut ctx = Ctx {
            g: &mut g,
            vars: &vars,
            store,
            mode: BnMode::Eval,
        };
        let y = enc.forward_with(&mut ctx, x, zeroed).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn zeroing_any_dense_layer_changes_output() {
        let cfg = tiny_cfg();
        let (enc, store) = build_encoder::<f64>(&cfg, 1).unwrap();
        let img = image(64, 2);
        let base = run(&enc, &store, &img, None);
        for b in 0..4 {
            for l in 0..2 {
                let out = run(&enc, &store, &img, Some((b, l)));
                assert_ne!(out, base, "block {b} layer {l}");
            }
        }
    }

    /// Input pixels whose gradient reaches the centre output cell.
    fn footprint(cfg: &EncoderConfig) -> usize {
        let mut store = ParamStore::<f64>::new();
        let enc = Encoder::build_unchecked(cfg, &mut store, &mut Init::new(5));
        let side = 192;
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let x = g.param(image(side, 6));
        let mut ctx = Ctx {
            g: &mut g,
            vars: &vars,
            store: &store,
            mode: BnMode::Eval,
        };
        let y = enc.forward(&mut ctx, x).unwrap();
        let (_, c, h, w) = g.value(y).dims4().unwrap();
        let mut mask = Tensor::zeros(vec![1, c, h, w]);
        for ch in 0..c {
            mask.data_mut()[(ch * h + h / 2) * w + w / 2] = 1.0;
        }
        let m = g.constant(mask);
        let picked = g.mul(y, m).unwrap();
        let loss = g.sum(picked).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        (0..side * side)
            .filter(|&p| (0..3).any(|ch| grad.data()[ch * side * side + p] != 0.0))
            .count()
    }

    #[test]
    fn dilation_widens_receptive_field() {
        let dilated = tiny_cfg();
        let flat = EncoderConfig {
            dilation_ladder: vec![1, 1, 1, 1],
            ..tiny_cfg()
        };
        assert!(flat.validate().is_err());
        let (wide, narrow) = (footprint(&dilated), footprint(&flat));
        assert!(wide > narrow, "dilated {wide} vs undilated {narrow}");
    }
}
