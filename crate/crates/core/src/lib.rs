//! Dual attention-gated U-Net segmentation on a small reverse-mode autodiff engine.
//!
//! Layers, from the bottom up:
//!
//! * [`tensor`], [`kernels`], [`tape`]: dense NCHW tensors, numerical kernels
//!   and a Wengert-list autodiff tape, generic over `f32`/`f64`.
//! * [`nn`]: SE, channel and spatial attention, TAM, AG-residual, MKRC,
//!   SE-ASPP, gating signal and the triple attention gate.
//! * [`arch`]: the two stacked encoder/decoder networks.
//! * [`loss`], [`metrics`], [`stats`]: hybrid BCE + Dice loss, confusion
//!   metrics and the paired t-test.
//! * [`data`]: synthetic corpora, image IO, augmentation and splitting.
//! * [`train`]: Adam, plateau schedule, training loop, checkpoints and ablation.

pub mod arch;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
