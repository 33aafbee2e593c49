//! Raster images as per-band pixel vectors with values in `[0, 1]`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, GrayImage, ImageReader, RgbImage};
use ndarray::Array1;

/// Row-major bands of equal length `width · height`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub bands: Vec<Array1<f64>>,
}

impl Image {
    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Loads an image. Grayscale files give one band, anything with colour gives
/// three (alpha is dropped). Samples are scaled from 8 bits to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = ImageReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .with_guessed_format()
        .with_context(|| format!("reading {}", path.display()))?
        .decode()
        .with_context(|| format!("decoding {}", path.display()))?;
    let (width, height) = (img.width(), img.height());
    let scale = |v: &u8| *v as f64 / 255.0;
    let bands = if img.color().has_color() {
        let rgb = img.to_rgb8();
        (0..3).map(|c| rgb.pixels().map(|p| scale(&p.0[c])).collect()).collect()
    } else {
        vec![img.to_luma8().iter().map(scale).collect()]
    };
    Ok(Image { width, height, bands })
}

/// Writes one or three bands as an 8-bit image; values are clamped to
/// `[0, 1]`. The format follows the file extension.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let n = img.pixels();
    if img.bands.iter().any(|b| b.len() != n) {
        bail!("band length does not match {}x{}", img.width, img.height);
    }
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let out = match img.bands.len() {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(img.width, img.height, img.bands[0].iter().map(|&v| quantize(v)).collect())
                .expect("buffer size checked"),
        ),
        3 => {
            let buf = (0..n).flat_map(|i| img.bands.iter().map(move |b| quantize(b[i]))).collect();
            DynamicImage::ImageRgb8(RgbImage::from_raw(img.width, img.height, buf).expect("buffer size checked"))
        }
        k => bail!("cannot save an image with {k} bands"),
    };
    out.save(path).with_context(|| format!("writing {}", path.display()))
}
