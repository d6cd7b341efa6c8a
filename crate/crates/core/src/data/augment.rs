use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SegSample;
use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Rot90,
    Rot270,
    Hflip,
    Vflip,
    Transpose,
    VflipRot90,
    Brightness,
    Contrast,
    Gamma,
    GaussianNoise,
    Identity,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 11] = [
        AugmentKind::Rot90,
        AugmentKind::Rot270,
        AugmentKind::Hflip,
        AugmentKind::Vflip,
        AugmentKind::Transpose,
        AugmentKind::VflipRot90,
        AugmentKind::Brightness,
        AugmentKind::Contrast,
        AugmentKind::Gamma,
        AugmentKind::GaussianNoise,
        AugmentKind::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::Rot90 => "rot90",
            AugmentKind::Rot270 => "rot270",
            AugmentKind::Hflip => "hflip",
            AugmentKind::Vflip => "vflip",
            AugmentKind::Transpose => "transpose",
            AugmentKind::VflipRot90 => "vflip_rot90",
            AugmentKind::Brightness => "brightness",
            AugmentKind::Contrast => "contrast",
            AugmentKind::Gamma => "gamma",
            AugmentKind::GaussianNoise => "gaussian_noise",
            AugmentKind::Identity => "identity",
        }
    }

    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            AugmentKind::Rot90
                | AugmentKind::Rot270
                | AugmentKind::Hflip
                | AugmentKind::Vflip
                | AugmentKind::Transpose
                | AugmentKind::VflipRot90
        )
    }
}

impl std::str::FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Value(format!("unknown augmentation kind {s:?}")))
    }
}

/// One augmentation. `param` is the brightness offset, contrast factor,
/// gamma exponent or noise standard deviation; geometric kinds ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentOp {
    pub kind: AugmentKind,
    #[serde(default)]
    pub param: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentOp {
    pub fn new(kind: AugmentKind) -> Self {
        AugmentOp { kind, param: 0.0, seed: 0 }
    }

    pub fn with_param(mut self, param: f64) -> Self {
        self.param = param;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Permute pixels of every channel; `map(y, x)` gives the source of output `(y, x)`.
fn permute(t: &Tensor<f32>, oh: usize, ow: usize, map: impl Fn(usize, usize) -> (usize, usize)) -> Tensor<f32> {
    let s = t.shape();
    let (c, w) = (s[0], s[2]);
    let h = s[1];
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = map(y, x);
                out.push(t.data()[ch * h * w + sy * w + sx]);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("permuted shape")
}

fn geometric(t: &Tensor<f32>, kind: AugmentKind) -> Tensor<f32> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    match kind {
        // Counter-clockwise quarter turn.
        AugmentKind::Rot90 => permute(t, w, h, |y, x| (x, w - 1 - y)),
        AugmentKind::Rot270 => permute(t, w, h, |y, x| (h - 1 - x, y)),
        AugmentKind::Hflip => permute(t, h, w, |y, x| (y, w - 1 - x)),
        AugmentKind::Vflip => permute(t, h, w, |y, x| (h - 1 - y, x)),
        AugmentKind::Transpose => permute(t, w, h, |y, x| (x, y)),
        AugmentKind::VflipRot90 => geometric(&geometric(t, AugmentKind::Vflip), AugmentKind::Rot90),
        _ => t.clone(),
    }
}

pub fn augment(s: &SegSample, op: AugmentOp) -> Result<SegSample> {
    let (image, mask) = if op.kind.is_geometric() {
        (geometric(&s.image, op.kind), geometric(&s.mask, op.kind))
    } else {
        let p = op.param;
        let image = match op.kind {
            AugmentKind::Identity => s.image.clone(),
            AugmentKind::Brightness => s.image.map(|v| (v as f64 + p).clamp(0.0, 1.0) as f32),
            AugmentKind::Contrast => {
                ensure!(p >= 0.0, "contrast factor must be >= 0, got {p}");
                let mean = s.image.sum() as f64 / s.image.numel() as f64;
                s.image.map(|v| ((v as f64 - mean) * p + mean).clamp(0.0, 1.0) as f32)
            }
            AugmentKind::Gamma => {
                ensure!(p > 0.0, "gamma must be > 0, got {p}");
                s.image.map(|v| (v as f64).powf(p).clamp(0.0, 1.0) as f32)
            }
            AugmentKind::GaussianNoise => {
                ensure!(p >= 0.0, "noise std must be >= 0, got {p}");
                let dist = Normal::new(0.0, p).map_err(|e| Error::Value(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(op.seed);
                let mut out = s.image.clone();
                for v in out.data_mut() {
                    *v = (*v as f64 + dist.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
                out
            }
            _ => unreachable!("geometric kinds handled above"),
        };
        (image, s.mask.clone())
    };
    let tag = if s.tag.is_empty() {
        op.kind.name().to_string()
    } else {
        format!("{}+{}", s.tag, op.kind.name())
    };
    Ok(SegSample {
        id: format!("{}_{}", s.id, op.kind.name()),
        base_id: s.base_id.clone(),
        tag,
        image,
        mask,
    })
}

fn bilinear(t: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f32> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = |o: usize, n: usize, on: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n as f64 / on as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            let (y0, y1, fy) = src(y, h, oh);
            for x in 0..ow {
                let (x0, x1, fx) = src(x, w, ow);
                let v = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("resized shape")
}

fn nearest(t: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f32> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    permute(t, oh, ow, |y, x| ((y * h) / oh, (x * w) / ow))
}

/// Bilinear resize for the image, nearest-neighbour for the mask.
pub fn resize_to(s: &SegSample, target: (usize, usize)) -> Result<SegSample> {
    let (oh, ow) = target;
    ensure!(oh > 0 && ow > 0, "resize target must be non-empty, got {oh}x{ow}");
    if (s.height(), s.width()) == target {
        return Ok(s.clone());
    }
    Ok(SegSample {
        image: bilinear(&s.image, oh, ow),
        mask: nearest(&s.mask, oh, ow),
        ..s.clone()
    })
}
