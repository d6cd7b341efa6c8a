use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SegSample;
use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Rect,
    Blob,
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(ShapeKind::Disk),
            "rect" => Ok(ShapeKind::Rect),
            "blob" => Ok(ShapeKind::Blob),
            other => Err(Error::Value(format!("unknown shape kind {other:?}"))),
        }
    }
}

/// Pixels whose centers lie inside the circle: `(x+.5-cx)² + (y+.5-cy)² <= r²`.
pub fn disk_mask(h: usize, w: usize, cx: f64, cy: f64, r: f64) -> Tensor<f32> {
    Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
        ((x - cx).powi(2) + (y - cy).powi(2) <= r * r) as u8 as f32
    })
}

fn rect_mask(h: usize, w: usize, y0: usize, x0: usize, rh: usize, rw: usize) -> Tensor<f32> {
    Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        (y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw) as u8 as f32
    })
}

fn union(a: &mut Tensor<f32>, b: &Tensor<f32>) {
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x = x.max(y);
    }
}

/// Procedural corpus of bright shapes on a darker textured background.
/// Sample `i` depends only on `(seed, i)`.
pub fn generate_synthetic(
    n: usize,
    size: (usize, usize),
    kind: ShapeKind,
    channels: usize,
    seed: u64,
) -> Result<Vec<SegSample>> {
    let (h, w) = size;
    ensure!(h >= 8 && w >= 8, "synthetic images need at least 8x8 pixels, got {h}x{w}");
    ensure!(channels == 1 || channels == 3, "channels must be 1 or 3, got {channels}");
    let noise = Normal::new(0.0, 0.05).expect("finite std");
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let side = h.min(w) as f64;
            let mask = match kind {
                ShapeKind::Disk => {
                    let r = rng.gen_range(side / 8.0..=side / 3.0);
                    let cx = rng.gen_range(r..=w as f64 - r);
                    let cy = rng.gen_range(r..=h as f64 - r);
                    disk_mask(h, w, cx, cy, r)
                }
                ShapeKind::Rect => {
                    let rh = rng.gen_range(h / 4..=h / 2);
                    let rw = rng.gen_range(w / 4..=w / 2);
                    let y0 = rng.gen_range(0..=h - rh);
                    let x0 = rng.gen_range(0..=w - rw);
                    rect_mask(h, w, y0, x0, rh, rw)
                }
                ShapeKind::Blob => {
                    let mut m = Tensor::zeros(&[1, h, w]);
                    let cx = rng.gen_range(w as f64 * 0.3..=w as f64 * 0.7);
                    let cy = rng.gen_range(h as f64 * 0.3..=h as f64 * 0.7);
                    for _ in 0..3 {
                        let r = rng.gen_range(side / 10.0..=side / 5.0);
                        let dx = rng.gen_range(-side / 6.0..=side / 6.0);
                        let dy = rng.gen_range(-side / 6.0..=side / 6.0);
                        union(&mut m, &disk_mask(h, w, cx + dx, cy + dy, r));
                    }
                    m
                }
            };
            let fg: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.65..0.9)).collect();
            let bg: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.1..0.35)).collect();
            let mut image = Tensor::zeros(&[channels, h, w]);
            for c in 0..channels {
                for p in 0..h * w {
                    let base = if mask.data()[p] > 0.5 { fg[c] } else { bg[c] };
                    let v = base + noise.sample(&mut rng);
                    image.data_mut()[c * h * w + p] = v.clamp(0.0, 1.0) as f32;
                }
            }
            SegSample::new(format!("{}{:04}", kind_prefix(kind), i), image, mask)
        })
        .collect()
}

fn kind_prefix(kind: ShapeKind) -> &'static str {
    match kind {
        ShapeKind::Disk => "disk",
        ShapeKind::Rect => "rect",
        ShapeKind::Blob => "blob",
    }
}
