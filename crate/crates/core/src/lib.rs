//! Composition-aware image aesthetics network: dilated dense encoder,
//! cascaded atrous context block, region composition graph reasoning and an
//! LSE-pooled head, plus training, evaluation and data tooling.

pub mod ablation;
pub mod aspp;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod heatmap;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod region_graph;
pub mod train;

pub use config::{ModelConfig, ModelVariant, Task, TrainConfig};
pub use error::{Error, Result};
pub use model::{Forward, RgNet};
pub use params::{Init, ParamStore};
pub use train::TrainState;
