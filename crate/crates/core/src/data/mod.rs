//! Samples, synthetic corpora, augmentation, resizing, splitting and image IO.

mod augment;
mod io;
mod split;
mod synth;

pub use augment::{augment, resize_to, AugmentKind, AugmentOp};
pub use io::{load_dir, load_image, write_mask_png, write_sample_png};
pub use split::{split, Split, DEFAULT_RATIOS};
pub use synth::{disk_mask, generate_synthetic, ShapeKind};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// An image `[C,H,W]` in `[0,1]` with its binary mask `[1,H,W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub id: String,
    /// Id of the unaugmented original; splits are keyed by it.
    pub base_id: String,
    /// Augmentations applied so far, `+`-separated; empty for originals.
    pub tag: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl SegSample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        let s = SegSample {
            base_id: id.clone(),
            id,
            tag: String::new(),
            image,
            mask,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.image.rank() == 3, "image must be [C,H,W], got {:?}", self.image.shape());
        ensure!(
            self.mask.rank() == 3 && self.mask.shape()[0] == 1 && self.mask.shape()[1..] == self.image.shape()[1..],
            "mask {:?} does not match image {:?}",
            self.mask.shape(),
            self.image.shape()
        );
        ensure!(
            self.image.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "image {} has values outside [0,1]",
            self.id
        );
        ensure!(
            self.mask.data().iter().all(|&v| v == 0.0 || v == 1.0),
            "mask {} is not binary",
            self.id
        );
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }
}

/// Stack samples into `[N,C,H,W]` images and `[N,1,H,W]` masks.
pub fn batch(samples: &[&SegSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    ensure!(!samples.is_empty(), "cannot batch zero samples");
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<_> = samples.iter().map(|s| &s.mask).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}
