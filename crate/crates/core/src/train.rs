//! Training loop, augmentation and evaluation.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgnet_tensor::image::{crop, hflip, resize_bilinear};
use rgnet_tensor::{BnMode, Graph, Scalar, Tensor, TensorError};

use crate::checkpoint::save_checkpoint;
use crate::config::{AugmentConfig, ModelConfig, Task, TrainConfig};
use crate::dataset::Samples;
use crate::error::{config_err, io_err, Error, Result};
use crate::head::classify;
use crate::metrics::{accuracy, average_precision, spearman};
use crate::model::RgNet;
use crate::optim::{lr_at, AdamState};

/// Everything needed to resume or reproduce training.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: RgNet<T>,
    pub adam: AdamState<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh state; the model is initialized from the training seed.
    pub fn new(model_cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let model = RgNet::new(model_cfg, seed)?;
        let adam = AdamState::new(model.store().values());
        Ok(Self {
            model,
            adam,
            epoch: 0,
            seed,
        })
    }
}

/// Generator for everything random in one epoch (order and augmentation).
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Random flip, random up-scaling and a crop back to the input side.
pub fn augment<T: Scalar>(img: &Tensor<T>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let flip = cfg.flip && rng.random_bool(0.5);
    let scale = if cfg.scale {
        rng.random_range(cfg.scale_min..=cfg.scale_max)
    } else {
        1.0
    };
    augment_with(img, flip, scale, rng)
}

/// [`augment`] with the flip decision and scale factor fixed by the caller.
pub fn augment_with<T: Scalar>(img: &Tensor<T>, flip: bool, scale: f64, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = if flip { hflip(img)? } else { img.clone() };
    if scale != 1.0 {
        let (sh, sw) = (scaled(h, scale), scaled(w, scale));
        out = resize_bilinear(&out, sh, sw)?;
        let top = rng.random_range(0..=sh - h);
        let left = rng.random_range(0..=sw - w);
        out = crop(&out, top, left, h, w)?;
    }
    Ok(out)
}

/// Side after scaling, never below the original.
pub fn scaled(side: usize, scale: f64) -> usize {
    ((side as f64 * scale).round() as usize).max(side)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

fn numeric(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(source @ TensorError::NonFinite { .. }) => Error::Numeric { epoch, step, source },
        other => other,
    }
}

/// Predicted binary labels for a batch prediction tensor.
fn batch_labels<T: Scalar>(task: Task, prediction: &Tensor<T>) -> Vec<u8> {
    match task {
        Task::Classify => prediction
            .data()
            .chunks(2)
            .map(|p| classify(p[0].to_f64(), p[1].to_f64()))
            .collect(),
        Task::Regress => prediction.data().iter().map(|s| u8::from(s.to_f64() >= 0.5)).collect(),
    }
}

fn binary_targets(task: Task, targets: &[f64]) -> Vec<u8> {
    match task {
        Task::Classify => targets.iter().map(|&t| t as u8).collect(),
        Task::Regress => targets.iter().map(|&t| u8::from(t >= 0.5)).collect(),
    }
}

fn is_similarity_transform(name: &str) -> bool {
    name == "graph.A" || name == "graph.B"
}

/// Forward, backward and one optimizer step on a batch. Returns the loss and
/// the predicted labels.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    images: Tensor<T>,
    targets: &[f64],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<u8>)> {
    rgnet_tensor::flush_subnormals();
    let model = &state.model;
    let mut g = Graph::new();
    let vars = model.store().bind(&mut g);
    let x = g.constant(images);
    let out = model.forward(&mut g, &vars, x, BnMode::Train)?;
    let loss = model.loss(&mut g, out.head.prediction, targets)?;
    let loss_value = g.value(loss).item().to_f64();
    let predicted = batch_labels(model.task(), g.value(out.head.prediction));
    g.backward(loss)?;
    let grads: Vec<Tensor<T>> = vars
        .iter()
        .zip(model.store().values())
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    let updates = g.take_stats_updates();
    drop(g);
    let store = state.model.store_mut();
    let scales: Vec<f64> = store
        .names()
        .iter()
        .map(|n| if is_similarity_transform(n) { cfg.similarity_lr_scale } else { 1.0 })
        .collect();
    state
        .adam
        .step_scaled(store.values_mut(), &grads, lr, &scales, cfg.weight_decay, &cfg.adam)?;
    store.apply_stats_updates(updates);
    Ok((loss_value, predicted))
}

/// Runs epoch `state.epoch` and advances it.
pub fn train_epoch<T: Scalar>(state: &mut TrainState<T>, cfg: &TrainConfig, data: &Samples<T>) -> Result<EpochMetrics> {
    let epoch = state.epoch;
    let lr = lr_at(epoch, cfg)?;
    let mut rng = epoch_rng(state.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    let task = state.model.task();
    let (mut loss_sum, mut hits) = (0.0, 0usize);
    for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut imgs = Vec::with_capacity(chunk.len());
        for &i in chunk {
            imgs.push(augment(&data.images[i], &cfg.augment, &mut rng)?);
        }
        let batch = Tensor::stack(&imgs)?;
        let targets: Vec<f64> = chunk.iter().map(|&i| data.targets[i]).collect();
        let (loss, predicted) = train_step(state, batch, &targets, lr, cfg).map_err(numeric(epoch, step))?;
        loss_sum += loss * chunk.len() as f64;
        let truth = binary_targets(task, &targets);
        hits += predicted.iter().zip(&truth).filter(|(p, t)| p == t).count();
    }
    state.epoch += 1;
    Ok(EpochMetrics {
        epoch,
        loss: loss_sum / data.len() as f64,
        accuracy: hits as f64 / data.len() as f64,
        lr,
    })
}

/// CSV log of per-epoch metrics, headed by the configuration digest.
pub struct MetricsLog {
    file: std::fs::File,
}

impl MetricsLog {
    pub const FILE_NAME: &'static str = "metrics.csv";

    pub fn create(dir: &Path, digest: &str) -> Result<Self> {
        let path = dir.join(Self::FILE_NAME);
        let mut file = std::fs::File::create(&path).map_err(io_err(&path))?;
        writeln!(file, "# config_digest={digest}\nepoch,loss,accuracy,lr").map_err(io_err(&path))?;
        Ok(Self { file })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        writeln!(self.file, "{},{},{},{}", m.epoch, m.loss, m.accuracy, m.lr).map_err(|source| Error::Io {
            path: Self::FILE_NAME.into(),
            source,
        })
    }
}

/// Checkpoint written (and overwritten) after every epoch.
pub const CHECKPOINT_FILE: &str = "checkpoint.rgck";

/// Trains from scratch for `cfg.epochs` epochs. With `out_dir`, writes the
/// metrics log and the latest checkpoint after every epoch.
pub fn train<T: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Samples<T>,
    out_dir: Option<&Path>,
) -> Result<(TrainState<T>, Vec<EpochMetrics>)> {
    model_cfg.validate()?;
    cfg.validate(model_cfg.task)?;
    if data.is_empty() {
        return Err(config_err("training manifest is empty"));
    }
    let mut state = TrainState::new(model_cfg, cfg.seed)?;
    let mut log = match out_dir {
        Some(dir) => Some(MetricsLog::create(dir, &model_cfg.digest())?),
        None => None,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    while state.epoch < cfg.epochs {
        let m = train_epoch(&mut state, cfg, data)?;
        log::info!(
            "epoch {} loss {:.5} accuracy {:.4} lr {:.3e}",
            m.epoch,
            m.loss,
            m.accuracy,
            m.lr
        );
        if let Some(dir) = out_dir {
            save_checkpoint(&state, &dir.join(CHECKPOINT_FILE))?;
        }
        if let Some(log) = log.as_mut() {
            log.append(&m)?;
        }
        history.push(m);
    }
    Ok((state, history))
}

/// Per-image model output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Class { p_low: f64, p_high: f64, label: u8 },
    Score(f64),
}

impl Prediction {
    /// Ranking score: `p_high` or the regressed score.
    pub fn score(&self) -> f64 {
        match *self {
            Prediction::Class { p_high, .. } => p_high,
            Prediction::Score(s) => s,
        }
    }

    pub fn label(&self) -> u8 {
        match *self {
            Prediction::Class { label, .. } => label,
            Prediction::Score(s) => u8::from(s >= 0.5),
        }
    }
}

/// Eval-mode predictions in input order.
pub fn predict<T: Scalar>(model: &RgNet<T>, images: &[Tensor<T>], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let batch = Tensor::stack(chunk)?;
        let p = model.predict(&batch)?;
        match model.task() {
            Task::Classify => out.extend(p.data().chunks(2).map(|c| {
                let (p_low, p_high) = (c[0].to_f64(), c[1].to_f64());
                Prediction::Class {
                    p_low,
                    p_high,
                    label: classify(p_low, p_high),
                }
            })),
            Task::Regress => out.extend(p.data().iter().map(|s| Prediction::Score(s.to_f64()))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub ap: f64,
    /// Rank correlation against the ground-truth values; absent below two
    /// samples.
    pub spearman: Option<f64>,
    pub count: usize,
}

pub fn evaluate<T: Scalar>(model: &RgNet<T>, data: &Samples<T>, batch_size: usize) -> Result<Metrics> {
    if data.is_empty() {
        return Err(config_err("evaluation manifest is empty"));
    }
    let preds = predict(model, &data.images, batch_size)?;
    let labels: Vec<u8> = preds.iter().map(Prediction::label).collect();
    let scores: Vec<f64> = preds.iter().map(Prediction::score).collect();
    let acc = accuracy(&labels, &data.labels);
    let ap = average_precision(&scores, &data.labels);
    let rho = match model.task() {
        Task::Regress => Some(spearman(&scores, &data.truth)?),
        Task::Classify if data.len() >= 2 => Some(spearman(&scores, &data.truth)?),
        Task::Classify => None,
    };
    Ok(Metrics {
        accuracy: acc,
        ap,
        spearman: rho,
        count: data.len(),
    })
}
