//! 8-bit PNG input and output.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{ColorType, DynamicImage, GrayImage, RgbImage};
use refsep::{Image, Raster};

/// Reads an 8-bit grayscale or RGB PNG (alpha is dropped) into `[0, 1]`.
pub fn read(path: &Path) -> Result<Image> {
    let img = image::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::L8 | ColorType::La8 => {
            let gray = img.to_luma8();
            let data = gray.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Ok(Raster::from_vec(h, w, 1, data)?)
        }
        ColorType::Rgb8 | ColorType::Rgba8 => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            Ok(Raster::from_fn(h, w, 3, |c, i, j| {
                raw[(i * w + j) * 3 + c] as f64 / 255.0
            }))
        }
        other => bail!(
            "{}: unsupported pixel format {other:?}; expected 8-bit gray or RGB",
            path.display()
        ),
    }
}

/// `round(255 v)` after clipping to `[0, 1]`; `f64::round` rounds half away
/// from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_dynamic(x: &Image) -> Result<DynamicImage> {
    let (h, w) = (x.height(), x.width());
    match x.channels() {
        1 => {
            let buf = x.plane(0).iter().map(|&v| quantize(v)).collect();
            Ok(DynamicImage::ImageLuma8(
                GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer matches size"),
            ))
        }
        3 => {
            let mut buf = Vec::with_capacity(h * w * 3);
            for i in 0..h {
                for j in 0..w {
                    for c in 0..3 {
                        buf.push(quantize(x.get(c, i, j)));
                    }
                }
            }
            Ok(DynamicImage::ImageRgb8(
                RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer matches size"),
            ))
        }
        n => bail!("cannot write a {n}-channel image as PNG"),
    }
}

pub fn write(path: &Path, x: &Image) -> Result<()> {
    to_dynamic(x)?
        .save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("cannot write {}", path.display()))
}
