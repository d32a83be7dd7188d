//! Non-differentiable image preprocessing on `[C, H, W]` tensors.

use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims3<T: Scalar>(op: &'static str, img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match img.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(shape_err(op, format!("expected [C, H, W], got {s:?}"))),
    }
}

/// Bilinear resampling with corner-aligned sampling grids, so affine
/// intensity ramps are reproduced exactly.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims3("resize_bilinear", img)?;
    if out_h == 0 || out_w == 0 {
        return Err(arg_err("resize_bilinear", "target extent must be positive"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let pos = if n_out == 1 {
                    0.0
                } else {
                    o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                };
                let i0 = (pos.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |y: usize, x: usize| plane[y * w + x].to_f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(T::from_f64(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Mirrors the image left to right.
pub fn hflip<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = dims3("hflip", img)?;
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for row in 0..c * h {
        out.extend(src[row * w..(row + 1) * w].iter().rev());
    }
    Tensor::new(vec![c, h, w], out)
}

/// Window of `size_h x size_w` whose top-left corner is `(top, left)`.
pub fn crop<T: Scalar>(img: &Tensor<T>, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims3("crop", img)?;
    if top + size_h > h || left + size_w > w || size_h == 0 || size_w == 0 {
        return Err(arg_err(
            "crop",
            format!("window {size_h}x{size_w} at ({top}, {left}) exceeds {h}x{w}"),
        ));
    }
    let src = img.data();
    let mut out = Vec::with_capacity(c * size_h * size_w);
    for ch in 0..c {
        for y in top..top + size_h {
            let base = (ch * h + y) * w;
            out.extend_from_slice(&src[base + left..base + left + size_w]);
        }
    }
    Tensor::new(vec![c, size_h, size_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_survives_resize() {
        let img = Tensor::<f64>::full(vec![3, 7, 5], 0.25);
        let out = resize_bilinear(&img, 13, 11).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resize_preserves_linear_ramp() {
        // f(y, x) = 0.1 + 0.02 y + 0.03 x sampled on a 9x6 grid
        let (h, w) = (9usize, 6usize);
        let img = Tensor::<f64>::from_fn(vec![1, h, w], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.1 + 0.02 * y + 0.03 * x
        });
        let (oh, ow) = (20usize, 15usize);
        let out = resize_bilinear(&img, oh, ow).unwrap();
        for yo in 0..oh {
            for xo in 0..ow {
                let y = yo as f64 * (h - 1) as f64 / (oh - 1) as f64;
                let x = xo as f64 * (w - 1) as f64 / (ow - 1) as f64;
                let expect = 0.1 + 0.02 * y + 0.03 * x;
                assert!((out.data()[yo * ow + xo] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let img = Tensor::<f32>::from_fn(vec![3, 4, 5], |i| i as f32);
        let once = hflip(&img).unwrap();
        assert_ne!(once, img);
        assert_eq!(once.data()[0], 4.0);
        assert_eq!(hflip(&once).unwrap(), img);
    }

    #[test]
    fn crop_bounds() {
        let img = Tensor::<f32>::from_fn(vec![1, 4, 4], |i| i as f32);
        let c = crop(&img, 1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(crop(&img, 3, 0, 2, 2).is_err());
    }
}
