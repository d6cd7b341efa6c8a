use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};

use super::SegSample;
use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: [&str; 2] = ["png", "pgm"];
const MASK_SUFFIX: &str = "_mask";

/// Planar `[C, H, W]` image in [0, 1].
pub fn load_image(path: impl AsRef<Path>, channels: usize) -> Result<Tensor<f32>> {
    let img = image::open(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = match channels {
        1 => img.to_luma8().into_raw(),
        3 => img.to_rgb8().into_raw(),
        c => return Err(Error::config(format!("channels must be 1 or 3, got {c}"))),
    };
    // Interleaved HWC to planar CHW.
    Ok(Tensor::from_fn(&[channels, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * channels + c] as f32 / 255.0
    }))
}

fn find_with_stem(dir: &Path, stem: &str) -> Option<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

/// Load every `<id>.png|pgm` with its `<id>_mask.png|pgm`, sorted by id.
/// Mask pixels at or above 128 are foreground.
pub fn load_dir(dir: impl AsRef<Path>, channels: usize) -> Result<Vec<SegSample>> {
    let dir = dir.as_ref();
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if ext_ok && !stem.ends_with(MASK_SUFFIX) {
            ids.push((stem.to_string(), path.clone()));
        }
    }
    ids.sort();
    ensure!(!ids.is_empty(), "no images found in {}", dir.display());
    ids.into_iter()
        .map(|(id, path)| {
            let mask_path = find_with_stem(dir, &format!("{id}{MASK_SUFFIX}")).ok_or_else(|| {
                Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("no mask for {} in {}", id, dir.display()),
                ))
            })?;
            let image = load_image(&path, channels)?;
            let mask = load_image(&mask_path, 1)?.map(|v| (v >= 0.5) as u8 as f32);
            SegSample::new(id, image, mask)
        })
        .collect()
}

fn to_bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

fn plane_dims(t: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        [1, c, h, w] => Ok((c, h, w)),
        _ => Err(Error::config(format!("cannot write tensor of shape {:?} as an image", t.shape()))),
    }
}

fn write_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = plane_dims(t)?;
    let bytes = to_bytes(t);
    match c {
        1 => GrayImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer size")
            .save_with_format(path, ImageFormat::Png)?,
        3 => {
            let hwc: Vec<u8> = (0..h * w * 3).map(|i| bytes[(i % 3) * h * w + i / 3]).collect();
            RgbImage::from_raw(w as u32, h as u32, hwc)
                .expect("buffer size")
                .save_with_format(path, ImageFormat::Png)?
        }
        _ => return Err(Error::config(format!("cannot write {c}-channel image"))),
    }
    Ok(())
}

/// Binarize a probability map at `threshold` and write an 8-bit {0,255} PNG.
pub fn write_mask_png(path: impl AsRef<Path>, probs: &Tensor<f32>, threshold: f64) -> Result<()> {
    let th = threshold as f32;
    write_png(path.as_ref(), &probs.map(|v| (v >= th) as u8 as f32))
}

/// Write `<id>.png` and `<id>_mask.png` into `dir`.
pub fn write_sample_png(dir: impl AsRef<Path>, s: &SegSample) -> Result<()> {
    let dir = dir.as_ref();
    write_png(&dir.join(format!("{}.png", s.id)), &s.image)?;
    write_png(&dir.join(format!("{}{MASK_SUFFIX}.png", s.id)), &s.mask)
}
