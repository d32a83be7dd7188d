use std::path::Path;

use rgnet_tensor::image::resize_bilinear;
use rgnet_tensor::{Scalar, Tensor};

use crate::error::{io_err, Error, Result};

fn header_err(msg: impl Into<String>) -> Error {
    Error::Data(format!("ppm: {}", msg.into()))
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(header_err("malformed header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err("malformed header"))
}

/// Binary PPM (P6, maxval up to 255) to a `[3, H, W]` tensor in `[0, 1]`.
pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(header_err("missing P6 magic"));
    }
    let mut pos = 2;
    let w = token(bytes, &mut pos)?;
    let h = token(bytes, &mut pos)?;
    let maxval = token(bytes, &mut pos)?;
    if w == 0 || h == 0 {
        return Err(header_err("zero extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(header_err(format!("unsupported maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(header_err("truncated payload"));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() < w * h * 3 {
        return Err(header_err(format!(
            "truncated payload: {} of {} bytes",
            payload.len(),
            w * h * 3
        )));
    }
    let scale = 1.0 / maxval as f64;
    let plane = w * h;
    let mut data = vec![T::ZERO; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = T::from_f64(payload[p * 3 + c] as f64 * scale);
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

pub fn read_ppm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Decodes and resizes to `side x side`.
pub fn load_image<T: Scalar>(path: &Path, side: usize) -> Result<Tensor<T>> {
    let img = read_ppm::<T>(path)?;
    if img.shape()[1] == side && img.shape()[2] == side {
        return Ok(img);
    }
    Ok(resize_bilinear(&img, side, side)?)
}

/// Interleaved 8-bit RGB as a P6 file.
pub fn encode_ppm(rgb: &[u8], w: usize, h: usize) -> Vec<u8> {
    assert_eq!(rgb.len(), w * h * 3);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// 8-bit grayscale as a P5 file.
pub fn encode_pgm(gray: &[u8], w: usize, h: usize) -> Vec<u8> {
    assert_eq!(gray.len(), w * h);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// `[3, H, W]` in `[0, 1]` back to interleaved bytes.
pub fn tensor_to_rgb8<T: Scalar>(img: &Tensor<T>) -> Vec<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = h * w;
    let mut out = vec![0u8; plane * 3];
    for p in 0..plane {
        for c in 0..3 {
            let v = img.data()[c * plane + p].to_f64().clamp(0.0, 1.0);
            out[p * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    out
}
