//! Synthetic benchmarks.
//!
//! `easy`: smooth vertical two-colour gradients (label 1) against uniform
//! pixel noise (label 0).
//!
//! `longrange`: two coloured squares on mid-gray, far apart. Label 1 when
//! their hues agree within the match tolerance, label 0 when they differ by
//! at least the mismatch floor. Positions and the first hue are drawn
//! independently of the label, so no single square carries label signal.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Record, Target};
use super::pnm::encode_ppm;
use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthTask {
    #[default]
    Easy,
    Longrange,
}

pub const BACKGROUND: u8 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub count: usize,
    pub side: usize,
    pub seed: u64,
    /// Square side in pixels; defaults to 24 at side 300, scaled linearly.
    pub square: Option<usize>,
    /// Minimum distance between square centres; defaults to 150 at side 300.
    pub min_distance: Option<f64>,
    pub match_tolerance_deg: f64,
    pub mismatch_min_deg: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            task: SynthTask::Easy,
            count: 64,
            side: 300,
            seed: 0,
            square: None,
            min_distance: None,
            match_tolerance_deg: 10.0,
            mismatch_min_deg: 60.0,
        }
    }
}

impl SynthSpec {
    pub fn square_side(&self) -> usize {
        self.square
            .unwrap_or_else(|| ((24.0 * self.side as f64 / 300.0).round() as usize).max(2))
    }

    pub fn distance_floor(&self) -> f64 {
        self.min_distance.unwrap_or(150.0 * self.side as f64 / 300.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.count < 2 {
            return bad(format!("count {} leaves a class empty", self.count));
        }
        if self.side < 8 {
            return bad(format!("side {} is too small", self.side));
        }
        if self.task == SynthTask::Longrange {
            let sq = self.square_side();
            let dist = self.distance_floor();
            if sq == 0 || sq * 2 > self.side {
                return bad(format!("square {sq} does not fit twice in side {}", self.side));
            }
            // Corner-to-corner centres are the farthest apart; keep slack so
            // rejection sampling terminates quickly.
            let reach = (self.side - sq) as f64 * std::f64::consts::SQRT_2;
            if dist > 0.8 * reach {
                return bad(format!(
                    "side {} too small to place squares {dist} px apart",
                    self.side
                ));
            }
            if dist < sq as f64 * std::f64::consts::SQRT_2 {
                return bad("min_distance lets the squares overlap".into());
            }
            let (tol, gap) = (self.match_tolerance_deg, self.mismatch_min_deg);
            if !(tol >= 0.0 && gap > tol && gap <= 180.0) {
                return bad("need 0 <= match_tolerance_deg < mismatch_min_deg <= 180".into());
            }
        }
        Ok(())
    }
}

/// One generated image, interleaved 8-bit RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub rgb: Vec<u8>,
    pub label: u8,
}

fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Balanced label sequence, shuffled by the seed.
fn labels(spec: &SynthSpec) -> Vec<u8> {
    let mut l: Vec<u8> = (0..spec.count).map(|i| u8::from(i < spec.count / 2)).collect();
    l.shuffle(&mut image_rng(spec.seed, usize::MAX - 1));
    l
}

/// HSV to 8-bit RGB, hue in degrees.
pub fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [u8; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

/// Hue in degrees of an RGB colour (0 for grays).
pub fn rgb_hue(rgb: [u8; 3]) -> f64 {
    let [r, g, b] = rgb.map(|u| u as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    h * 60.0
}

/// Shortest angular distance on the hue circle.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn render_easy(side: usize, label: u8, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut rgb = vec![0u8; side * side * 3];
    if label == 1 {
        let top: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
        let bottom: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
        for y in 0..side {
            let t = y as f64 / (side - 1) as f64;
            for x in 0..side {
                for c in 0..3 {
                    rgb[(y * side + x) * 3 + c] = (top[c] + (bottom[c] - top[c]) * t).round() as u8;
                }
            }
        }
    } else {
        rng.fill(&mut rgb[..]);
    }
    rgb
}

fn render_longrange(spec: &SynthSpec, label: u8, rng: &mut ChaCha8Rng) -> Result<Vec<u8>> {
    let side = spec.side;
    let sq = spec.square_side();
    let floor = spec.distance_floor();
    let span = side - sq;
    let mut corners = None;
    for _ in 0..10_000 {
        let a = (rng.random_range(0..=span), rng.random_range(0..=span));
        let b = (rng.random_range(0..=span), rng.random_range(0..=span));
        let (dx, dy) = (a.0 as f64 - b.0 as f64, a.1 as f64 - b.1 as f64);
        if (dx * dx + dy * dy).sqrt() >= floor {
            corners = Some((a, b));
            break;
        }
    }
    let (a, b) = corners.ok_or_else(|| Error::Config(format!("synth: could not place squares in side {side}")))?;
    let h1 = rng.random_range(0.0..360.0);
    let offset = if label == 1 {
        rng.random_range(-spec.match_tolerance_deg..=spec.match_tolerance_deg)
    } else {
        rng.random_range(spec.mismatch_min_deg..=360.0 - spec.mismatch_min_deg)
    };
    let colors = [hsv_to_rgb(h1, 0.9, 0.9), hsv_to_rgb(h1 + offset, 0.9, 0.9)];
    let mut rgb = vec![BACKGROUND; side * side * 3];
    for ((x0, y0), color) in [a, b].into_iter().zip(colors) {
        for y in y0..y0 + sq {
            for x in x0..x0 + sq {
                rgb[(y * side + x) * 3..][..3].copy_from_slice(&color);
            }
        }
    }
    Ok(rgb)
}

/// Renders every image of `spec` in memory.
pub fn render_all(spec: &SynthSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    labels(spec)
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = image_rng(spec.seed, i);
            let rgb = match spec.task {
                SynthTask::Easy => render_easy(spec.side, label, &mut rng),
                SynthTask::Longrange => render_longrange(spec, label, &mut rng)?,
            };
            Ok(SynthImage { rgb, label })
        })
        .collect()
}

/// Writes `images/NNNNN.ppm` and `manifest.jsonl` under `dir`.
pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<Manifest> {
    let images = render_all(spec)?;
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    let mut records = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let rel = format!("images/{i:05}.ppm");
        let path = dir.join(&rel);
        std::fs::write(&path, encode_ppm(&img.rgb, spec.side, spec.side)).map_err(io_err(&path))?;
        records.push(Record {
            path: rel,
            target: Target::Label(img.label),
        });
    }
    let manifest = Manifest::new(dir, records)?;
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Colour and top-left corner of every non-background square, in raster
/// order of their corners.
pub fn find_squares(rgb: &[u8], side: usize) -> Vec<([u8; 3], usize, usize)> {
    let mut seen = vec![false; side * side];
    let mut out = Vec::new();
    for y in 0..side {
        for x in 0..side {
            let p = y * side + x;
            let px = [rgb[p * 3], rgb[p * 3 + 1], rgb[p * 3 + 2]];
            if seen[p] || px == [BACKGROUND; 3] {
                continue;
            }
            // Flood the axis-aligned block of this colour.
            let mut w = 0;
            while x + w < side && rgb[(y * side + x + w) * 3..][..3] == px {
                w += 1;
            }
            let mut h = 0;
            while y + h < side && rgb[((y + h) * side + x) * 3..][..3] == px {
                h += 1;
            }
            for yy in y..y + h {
                for xx in x..x + w {
                    seen[yy * side + xx] = true;
                }
            }
            out.push((px, x, y));
        }
    }
    out
}

/// Held-out accuracy of a logistic classifier that sees only one square per
/// image (its colour, hue and position), by 5-fold cross-validation. Near
/// 0.5 when the label is purely relational.
pub fn single_square_baseline(images: &[SynthImage], side: usize) -> f64 {
    let mut feats = Vec::with_capacity(images.len());
    for img in images {
        let squares = find_squares(&img.rgb, side);
        let (color, x, y) = squares[0];
        let h = rgb_hue(color).to_radians();
        feats.push(vec![
            color[0] as f64 / 255.0,
            color[1] as f64 / 255.0,
            color[2] as f64 / 255.0,
            h.cos(),
            h.sin(),
            x as f64 / side as f64,
            y as f64 / side as f64,
        ]);
    }
    let labels: Vec<f64> = images.iter().map(|i| i.label as f64).collect();
    let folds = 5;
    let mut correct = 0;
    for f in 0..folds {
        let train: Vec<usize> = (0..images.len()).filter(|i| i % folds != f).collect();
        let w = fit_logistic(&feats, &labels, &train);
        for i in (0..images.len()).filter(|i| i % folds == f) {
            let z = logit(&w, &feats[i]);
            if u8::from(z > 0.0) as f64 == labels[i] {
                correct += 1;
            }
        }
    }
    correct as f64 / images.len() as f64
}

fn logit(w: &[f64], x: &[f64]) -> f64 {
    w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

fn fit_logistic(x: &[Vec<f64>], y: &[f64], rows: &[usize]) -> Vec<f64> {
    let d = x[0].len();
    let mut w = vec![0.0; d + 1];
    let n = rows.len() as f64;
    for _ in 0..500 {
        let mut grad = vec![0.0; d + 1];
        for &i in rows {
            let p = 1.0 / (1.0 + (-logit(&w, &x[i])).exp());
            let e = p - y[i];
            grad[0] += e;
            for k in 0..d {
                grad[k + 1] += e * x[i][k];
            }
        }
        for k in 0..=d {
            w[k] -= 1.0 * grad[k] / n;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hue_round_trip() {
        for h in [0.0, 17.0, 95.0, 200.0, 359.0] {
            let back = rgb_hue(hsv_to_rgb(h, 0.9, 0.9));
            assert!(hue_distance(h, back) < 1.0, "{h} -> {back}");
        }
        assert_eq!(hue_distance(350.0, 10.0), 20.0);
    }

    #[test]
    fn scaled_defaults() {
        let s = SynthSpec {
            side: 300,
            ..SynthSpec::default()
        };
        assert_eq!((s.square_side(), s.distance_floor()), (24, 150.0));
        let s = SynthSpec {
            side: 64,
            task: SynthTask::Longrange,
            ..SynthSpec::default()
        };
        assert_eq!(s.square_side(), 5);
        s.validate().unwrap();
        let tiny = SynthSpec {
            side: 40,
            min_distance: Some(60.0),
            task: SynthTask::Longrange,
            ..SynthSpec::default()
        };
        assert!(tiny.validate().is_err());
    }
}
