//! Architecture and optimization settings.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseBlockSpec {
    pub layers: usize,
    pub growth_rate: usize,
}

/// Densely connected fully convolutional encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub dense_blocks: Vec<DenseBlockSpec>,
    pub transition_compression: f64,
    /// Dilation of every convolution inside each dense block.
    pub dilation_ladder: Vec<usize>,
    /// Whether the transition after block `i` halves the spatial extent.
    pub downsample_stages: Vec<bool>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stem_channels: 16,
            stem_kernel: 3,
            dense_blocks: vec![
                DenseBlockSpec {
                    layers: 3,
                    growth_rate: 12
                };
                4
            ],
            transition_compression: 0.5,
            dilation_ladder: vec![1, 1, 2, 4],
            downsample_stages: vec![true, false, false],
        }
    }
}

/// Spatial /2 stages ahead of the dense blocks: the strided stem and one pool.
pub const FIXED_REDUCTIONS: usize = 2;
/// Overall encoder output stride.
pub const OUTPUT_STRIDE: usize = 8;

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 {
            return Err(config_err("encoder.stem_channels must be positive"));
        }
        if self.stem_kernel % 2 == 0 {
            return Err(config_err("encoder.stem_kernel must be odd"));
        }
        if self.dense_blocks.is_empty() {
            return Err(config_err("encoder.dense_blocks is empty"));
        }
        for (i, b) in self.dense_blocks.iter().enumerate() {
            if b.layers == 0 || b.growth_rate == 0 {
                return Err(config_err(format!(
                    "encoder.dense_blocks[{i}]: layers and growth_rate must be positive"
                )));
            }
        }
        if !(self.transition_compression > 0.0 && self.transition_compression <= 1.0) {
            return Err(config_err("encoder.transition_compression must lie in (0, 1]"));
        }
        let n = self.dense_blocks.len();
        if self.dilation_ladder.len() != n {
            return Err(config_err(format!(
                "encoder.dilation_ladder has {} entries for {n} blocks",
                self.dilation_ladder.len()
            )));
        }
        if self.downsample_stages.len() + 1 != n {
            return Err(config_err(format!(
                "encoder.downsample_stages needs {} entries (one per transition)",
                n - 1
            )));
        }
        let pools = self.downsample_stages.iter().filter(|&&p| p).count();
        if FIXED_REDUCTIONS + pools != 3 {
            return Err(config_err(format!(
                "encoder must halve the input exactly three times (output stride {OUTPUT_STRIDE}), got {}",
                FIXED_REDUCTIONS + pools
            )));
        }
        if let Some(first_free) = self.downsample_stages.iter().position(|&p| !p) {
            if self.downsample_stages[first_free..].iter().any(|&p| p) {
                return Err(config_err("encoder: pooling transitions must precede pool-free ones"));
            }
        }
        // Each removed pooling doubles the dilation of everything after it.
        let mut expected = 1;
        for (i, &d) in self.dilation_ladder.iter().enumerate() {
            if i > 0 && !self.downsample_stages[i - 1] {
                expected *= 2;
            }
            if d != expected {
                return Err(config_err(format!(
                    "encoder.dilation_ladder[{i}] = {d}, expected {expected} after the removed poolings"
                )));
            }
        }
        Ok(())
    }
}

/// Cascaded atrous block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsppConfig {
    pub rates: Vec<usize>,
    /// Output channels of every atrous branch.
    pub channels: usize,
    pub kernel: usize,
}

impl Default for AsppConfig {
    fn default() -> Self {
        Self {
            rates: vec![3, 6, 12, 18],
            channels: 64,
            kernel: 3,
        }
    }
}

impl AsppConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.rates[0] == 0 {
            return Err(config_err("aspp.rates must be non-empty and positive"));
        }
        if self.rates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("aspp.rates must be strictly increasing"));
        }
        if self.channels == 0 {
            return Err(config_err("aspp.channels must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(config_err("aspp.kernel must be odd"));
        }
        Ok(())
    }

    /// Output width for an input of `d` channels.
    pub fn output_channels(&self, d: usize) -> usize {
        d + self.rates.len() * self.channels
    }
}

/// Region composition graph reasoning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub blocks: usize,
    pub recompute_adjacency: bool,
    /// Row count of the similarity transforms; `None` keeps them square.
    pub embed_dim: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            recompute_adjacency: false,
            embed_dim: None,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(config_err("graph.blocks must be at least 1"));
        }
        if self.embed_dim == Some(0) {
            return Err(config_err("graph.embed_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    /// Log-sum-exp sharpness.
    pub r: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { r: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Binary low/high aesthetics.
    #[default]
    Classify,
    /// Real-valued score in `[0, 1]`.
    Regress,
}

/// Architectural ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Encoder, global average pooling, fully connected classifier.
    #[serde(rename = "FC_CNN")]
    FcCnn,
    #[serde(rename = "FCN")]
    Fcn,
    #[serde(rename = "FCN_A")]
    FcnA,
    #[serde(rename = "FCN_G")]
    FcnG,
    #[default]
    #[serde(rename = "FCN_A_G")]
    FcnAG,
    /// ASPP and graph replaced by the same number of plain 3x3 convolutions.
    #[serde(rename = "FCN_C_C")]
    FcnCC,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::FcCnn,
        ModelVariant::Fcn,
        ModelVariant::FcnA,
        ModelVariant::FcnG,
        ModelVariant::FcnCC,
        ModelVariant::FcnAG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::FcCnn => "FC_CNN",
            ModelVariant::Fcn => "FCN",
            ModelVariant::FcnA => "FCN_A",
            ModelVariant::FcnG => "FCN_G",
            ModelVariant::FcnAG => "FCN_A_G",
            ModelVariant::FcnCC => "FCN_C_C",
        }
    }

    pub fn has_aspp(self) -> bool {
        matches!(self, ModelVariant::FcnA | ModelVariant::FcnAG)
    }

    pub fn has_graph(self) -> bool {
        matches!(self, ModelVariant::FcnG | ModelVariant::FcnAG)
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model variant '{s}'"))
    }
}

/// Everything that determines parameter shapes and the forward computation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub task: Task,
    pub encoder: EncoderConfig,
    pub aspp: AsppConfig,
    pub graph: GraphConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.aspp.validate()?;
        self.graph.validate()?;
        if !(self.head.r > 0.0 && self.head.r.is_finite()) {
            return Err(config_err("head.r must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("model config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn digest_bytes(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(self).expect("model config serializes");
        Sha256::digest(&canonical).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Bce,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub scale: bool,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            scale: true,
            scale_min: 1.05,
            scale_max: 1.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    /// Exponent of the polynomial learning-rate decay.
    pub power: f64,
    pub seed: u64,
    pub loss: Loss,
    /// Side of the square network input.
    pub input_side: usize,
    /// Input side used by the FC_CNN variant.
    pub fc_cnn_side: usize,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
    /// Learning-rate multiplier for the graph similarity transforms.
    pub similarity_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            lr0: 1e-4,
            weight_decay: 1e-5,
            power: 0.9,
            seed: 0,
            loss: Loss::Bce,
            input_side: 300,
            fc_cnn_side: 224,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
            similarity_lr_scale: 1.0,
        }
    }
}

/// Smallest input side the encoder accepts.
pub const MIN_INPUT_SIDE: usize = 64;

impl TrainConfig {
    pub fn validate(&self, task: Task) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err("train.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("train.batch_size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(config_err("train.lr0 must be positive"));
        }
        if !(self.similarity_lr_scale > 0.0 && self.similarity_lr_scale.is_finite()) {
            return Err(config_err("train.similarity_lr_scale must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !(self.power > 0.0) {
            return Err(config_err("train.weight_decay must be >= 0 and train.power > 0"));
        }
        if self.input_side < MIN_INPUT_SIDE || self.fc_cnn_side < MIN_INPUT_SIDE {
            return Err(config_err(format!("input sides must be at least {MIN_INPUT_SIDE}")));
        }
        let a = &self.augment;
        if a.scale && !(a.scale_min >= 1.0 && a.scale_max >= a.scale_min) {
            return Err(config_err("train.augment needs 1 <= scale_min <= scale_max"));
        }
        let ad = &self.adam;
        if !(0.0..1.0).contains(&ad.beta1) || !(0.0..1.0).contains(&ad.beta2) || !(ad.eps > 0.0) {
            return Err(config_err("train.adam: betas must lie in [0, 1) and eps > 0"));
        }
        match (task, self.loss) {
            (Task::Classify, Loss::Bce) | (Task::Regress, Loss::Mse) => Ok(()),
            _ => Err(config_err("train.loss must be bce for classify and mse for regress")),
        }
    }

    /// Network input side for a variant.
    pub fn side_for(&self, variant: ModelVariant) -> usize {
        if variant == ModelVariant::FcCnn {
            self.fc_cnn_side
        } else {
            self.input_side
        }
    }
}
