//! Frame ingestion (binary PPM/PGM, 8-bit) and bilinear resizing.
//!
//! Frames are [3, H, W] tensors with values in [0, 1], RGB channel order.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{atomic_write, Tensor};

/// Parse a binary P6 (RGB) or P5 (gray, replicated to 3 channels) image with
/// 8-bit samples, scaling to [0, 1].
pub fn read_pnm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(bytes)?;
    let channels = match magic.as_str() {
        "P6" => 3usize,
        "P5" => 1usize,
        other => return Err(Error::Format(format!("unsupported PNM magic {:?}", other))),
    };
    let parse = |s: String| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PNM header field {:?}", s)))
    };
    let width = parse(token(bytes)?)?;
    let height = parse(token(bytes)?)?;
    let maxval = parse(token(bytes)?)?;
    if width == 0 || height == 0 {
        return Err(Error::Format("zero PNM dimensions".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PNM maxval {}", maxval)));
    }
    // single whitespace byte separates header from raster
    pos += 1;
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(Error::Format(format!(
            "PNM raster truncated: need {} bytes, have {}",
            need,
            bytes.len().saturating_sub(pos)
        )));
    }
    let raster = &bytes[pos..pos + need];

    let scale = 1.0f32 / maxval as f32;
    let mut data = vec![0.0f32; 3 * height * width];
    for y in 0..height {
        for x in 0..width {
            let base = (y * width + x) * channels;
            for c in 0..3 {
                let v = raster[base + c.min(channels - 1)] as f32 * scale;
                data[(c * height + y) * width + x] = v;
            }
        }
    }
    Tensor::from_vec(&[3, height, width], data)
}

pub fn read_pnm_file(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    read_pnm(&bytes).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))
}

/// Serialize a [3, H, W] frame as binary P6 with 8-bit samples. Values are
/// clamped to [0, 1] and rounded.
pub fn write_ppm(frame: &Tensor) -> Result<Vec<u8>> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::InvalidShape(format!(
            "expected [3, H, W] frame, got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut out = Vec::with_capacity(20 + 3 * h * w);
    write!(out, "P6\n{} {}\n255\n", w, h)?;
    let data = frame.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = data[(c * h + y) * w + x].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_ppm_file(frame: &Tensor, path: &Path) -> Result<()> {
    atomic_write(path, &write_ppm(frame)?)
}

/// Bilinear resize with half-pixel alignment. Outputs are convex
/// combinations of inputs, so values stay within the input range.
pub fn resize_bilinear(frame: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = frame.shape();
    if shape.len() != 3 {
        return Err(Error::InvalidShape(format!(
            "expected [C, H, W] frame, got {:?}",
            shape
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Geometry("resize target must be >= 1".into()));
    }
    let (c, in_h, in_w) = (shape[0], shape[1], shape[2]);
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(frame.clone());
    }

    let scale_y = in_h as f64 / out_h as f64;
    let scale_x = in_w as f64 / out_w as f64;
    let coords = |out_i: usize, scale: f64, in_len: usize| -> (usize, usize, f32) {
        let src = ((out_i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(in_len - 1);
        (lo, hi, (src - lo as f64) as f32)
    };

    let x_coords: Vec<(usize, usize, f32)> =
        (0..out_w).map(|i| coords(i, scale_x, in_w)).collect();
    let data = frame.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    for ch in 0..c {
        let plane = &data[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for oy in 0..out_h {
            let (y0, y1, fy) = coords(oy, scale_y, in_h);
            let row0 = &plane[y0 * in_w..(y0 + 1) * in_w];
            let row1 = &plane[y1 * in_w..(y1 + 1) * in_w];
            let orow = &mut out[(ch * out_h + oy) * out_w..(ch * out_h + oy + 1) * out_w];
            for (o, &(x0, x1, fx)) in orow.iter_mut().zip(&x_coords) {
                let top = row0[x0] + fx * (row0[x1] - row0[x0]);
                let bot = row1[x0] + fx * (row1[x1] - row1[x0]);
                *o = top + fy * (bot - top);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn resize_constant_stays_constant() {
        let frame = Tensor::filled(&[3, 5, 7], 0.4).unwrap();
        let out = resize_bilinear(&frame, 11, 3).unwrap();
        assert_eq!(out.shape(), &[3, 11, 3]);
        for &v in out.data() {
            assert!((v - 0.4).abs() <= 1e-6);
        }
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let frame = Tensor::fill_uniform(&[3, 8, 9], 0.0, 1.0, &mut Rng::new(1)).unwrap();
        let out = resize_bilinear(&frame, 8, 9).unwrap();
        for (a, b) in frame.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn resize_gradient_rows_monotone() {
        // each row is [0, 1]; widened rows must be non-decreasing
        let mut frame = Tensor::zeros(&[3, 2, 2]).unwrap();
        for c in 0..3 {
            for y in 0..2 {
                frame.data_mut()[(c * 2 + y) * 2 + 1] = 1.0;
            }
        }
        let out = resize_bilinear(&frame, 2, 4).unwrap();
        for row in out.data().chunks_exact(4) {
            for pair in row.windows(2) {
                assert!(pair[1] >= pair[0], "row {:?} not monotone", row);
            }
        }
    }

    #[test]
    fn resize_preserves_value_range() {
        let frame = Tensor::fill_uniform(&[3, 6, 6], 0.2, 0.8, &mut Rng::new(2)).unwrap();
        let lo = frame.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = frame.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let out = resize_bilinear(&frame, 13, 5).unwrap();
        for &v in out.data() {
            assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
        }
    }

    #[test]
    fn ppm_round_trip() {
        let mut rng = Rng::new(3);
        let frame = Tensor::fill_uniform(&[3, 4, 5], 0.0, 1.0, &mut rng).unwrap();
        let bytes = write_ppm(&frame).unwrap();
        let back = read_pnm(&bytes).unwrap();
        assert_eq!(back.shape(), frame.shape());
        for (a, b) in frame.data().iter().zip(back.data()) {
            // 8-bit quantization
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn pgm_replicates_channels() {
        let bytes = b"P5\n2 1\n255\n\x00\xff";
        let frame = read_pnm(bytes).unwrap();
        assert_eq!(frame.shape(), &[3, 1, 2]);
        assert_eq!(frame.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pnm_comments_allowed() {
        let bytes = b"P6\n# a comment\n1 1\n255\n\x10\x20\x30";
        let frame = read_pnm(bytes).unwrap();
        assert_eq!(frame.shape(), &[3, 1, 1]);
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(read_pnm(b"P3\n1 1\n255\n"), Err(Error::Format(_))));
    }
}
