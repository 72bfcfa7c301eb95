//! PNG images as `[3,H,W]` tensors in `[0,1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

const SIGNATURE: [u8; 8] = [137, 80, 78, 71, 13, 10, 26, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Read an 8- or 16-bit PNG. Gray is replicated to three channels and alpha
/// is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 8];
    let n = file.read(&mut head).map_err(|e| Error::io(path, e))?;
    if n < 8 || head != SIGNATURE {
        return Err(Error::format(path, "not a PNG file"));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::format(path, "unexpanded palette")),
    };
    let sample = |i: usize| -> f64 {
        match info.bit_depth {
            png::BitDepth::Sixteen => {
                u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / 65535.0
            }
            _ => buf[i] as f64 / 255.0,
        }
    };
    if !matches!(info.bit_depth, png::BitDepth::Eight | png::BitDepth::Sixteen) {
        return Err(Error::format(path, "unsupported bit depth"));
    }
    let bytes_per = if info.bit_depth == png::BitDepth::Sixteen { 2 } else { 1 };
    let mut out = Tensor::zeros(&[3, h, w]);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let base = y * (info.line_size / bytes_per) + x * channels;
            for c in 0..3 {
                let src = if channels < 3 { base } else { base + c };
                data[(c * h + y) * w + x] = sample(src);
            }
        }
    }
    Ok(out)
}

/// Write a `[3,H,W]` (or `[1,H,W]`) tensor, clamped to `[0,1]`.
pub fn save_image(t: &Tensor<f64>, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = match *t.shape() {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        _ => return Err(dim_err!("cannot save tensor of shape {:?} as an image", t.shape())),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    let mut bytes = Vec::with_capacity(c * h * w * 2);
    match depth {
        BitDepth::Eight => enc.set_depth(png::BitDepth::Eight),
        BitDepth::Sixteen => enc.set_depth(png::BitDepth::Sixteen),
    }
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = t.data()[(ch * h + y) * w + x].clamp(0.0, 1.0);
                match depth {
                    BitDepth::Eight => bytes.push((v * 255.0).round() as u8),
                    BitDepth::Sixteen => {
                        bytes.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes())
                    }
                }
            }
        }
    }
    let to_format = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(to_format)?;
    writer.write_image_data(&bytes).map_err(to_format)?;
    writer.finish().map_err(to_format)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let t = Tensor::from_fn(&[3, 5, 7], |i| ((i * 7919) % 1000) as f64 / 999.0);
        save_image(&t, &p, BitDepth::Sixteen).unwrap();
        let back = load_image(&p).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() <= 1.0 / 65535.0);
    }

    #[test]
    fn eight_bit_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let t = Tensor::from_fn(&[3, 4, 4], |i| i as f64 / 47.0 * 1.2 - 0.1);
        save_image(&t, &p, BitDepth::Eight).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b.clamp(0.0, 1.0)).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let t = Tensor::from_fn(&[1, 3, 3], |i| i as f64 / 8.0);
        save_image(&t, &p, BitDepth::Sixteen).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.shape(), &[3, 3, 3]);
        for c in 0..3 {
            for i in 0..9 {
                assert!((back.data()[c * 9 + i] - i as f64 / 8.0).abs() <= 1.0 / 65535.0);
            }
        }
    }

    #[test]
    fn non_png_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"GIF89a not a png").unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("x.png"));
        assert!(matches!(load_image(dir.path().join("missing.png")), Err(Error::Io { .. })));
    }
}
