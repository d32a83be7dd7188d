//! Image codecs, label manifests and synthetic benchmarks.

mod manifest;
mod pnm;
pub mod synth;

pub use manifest::{binarize_ava, Manifest, Record, Target, TargetKind};
pub use pnm::{decode_ppm, encode_pgm, encode_ppm, load_image, read_ppm, tensor_to_rgb8};

use rgnet_tensor::{Scalar, Tensor};

use crate::config::Task;
use crate::error::Result;

/// Decoded images with their targets, ready for batching.
#[derive(Debug, Clone)]
pub struct Samples<T> {
    pub paths: Vec<String>,
    /// `[3, S, S]` each.
    pub images: Vec<Tensor<T>>,
    /// Loss targets: 0/1 when classifying, `[0, 1]` scores when regressing.
    pub targets: Vec<f64>,
    pub labels: Vec<u8>,
    /// Ground truth used for rank correlation.
    pub truth: Vec<f64>,
}

impl<T: Scalar> Samples<T> {
    /// Decodes every manifest image at `side x side`.
    pub fn load(manifest: &Manifest, side: usize, task: Task) -> Result<Self> {
        let mut out = Samples {
            paths: Vec::with_capacity(manifest.len()),
            images: Vec::with_capacity(manifest.len()),
            targets: Vec::with_capacity(manifest.len()),
            labels: Vec::with_capacity(manifest.len()),
            truth: Vec::with_capacity(manifest.len()),
        };
        for rec in manifest.records() {
            out.images.push(load_image(&manifest.resolve(rec), side)?);
            out.paths.push(rec.path.clone());
            out.targets.push(rec.target.loss_target(task)?);
            out.labels.push(rec.target.label()?);
            out.truth.push(rec.target.value());
        }
        Ok(out)
    }

    /// In-memory synthetic images (rendered at `side`) resized to `input_side`.
    pub fn from_synth(images: &[synth::SynthImage], side: usize, input_side: usize) -> Result<Self> {
        let mut out = Samples {
            paths: Vec::with_capacity(images.len()),
            images: Vec::with_capacity(images.len()),
            targets: Vec::with_capacity(images.len()),
            labels: Vec::with_capacity(images.len()),
            truth: Vec::with_capacity(images.len()),
        };
        for (i, img) in images.iter().enumerate() {
            let t: Tensor<T> = decode_ppm(&encode_ppm(&img.rgb, side, side))?;
            let t = if side == input_side {
                t
            } else {
                rgnet_tensor::image::resize_bilinear(&t, input_side, input_side)?
            };
            out.images.push(t);
            out.paths.push(format!("synth/{i:05}"));
            out.targets.push(img.label as f64);
            out.labels.push(img.label);
            out.truth.push(img.label as f64);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
