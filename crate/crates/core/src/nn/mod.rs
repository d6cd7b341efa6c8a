//! Layers and composite blocks.
//!
//! Blocks only hold [`ParamId`]s and shape metadata, so one built network can
//! run in `f32` for training and in `f64` against a cast copy of its store.

mod attention;
mod blocks;
mod layers;

pub use attention::{ChannelAttention, SeBlock, SpatialAttention, Tam};
pub use attention::bottleneck_width;
pub use blocks::{AgResidual, BlockOptions, GatingSignal, Mkrc, SeAspp, Tag, MKRC_KERNELS, SE_ASPP_DILATIONS};
pub use layers::{BatchNorm, Conv, ConvBn, Linear};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses batch statistics.
    Train,
    /// Batch-norm uses running statistics.
    Eval,
}

/// An attention scale map captured during a forward pass.
#[derive(Debug, Clone)]
pub struct Probe<T> {
    pub site: String,
    pub scale: Tensor<T>,
}

enum StoreRef<'a, T> {
    Shared(&'a ParamStore<T>),
    Exclusive(&'a mut ParamStore<T>),
}

/// One forward pass: the tape plus access to parameters.
pub struct Forward<'a, T: Real> {
    pub tape: Tape<T>,
    store: StoreRef<'a, T>,
    mode: Mode,
    update_stats: bool,
    cache: HashMap<ParamId, Var>,
    probes: Option<Vec<Probe<T>>>,
}

impl<'a, T: Real> Forward<'a, T> {
    /// A pass that may update batch-norm running statistics (train mode).
    pub fn new(store: &'a mut ParamStore<T>, mode: Mode) -> Self {
        Forward {
            tape: Tape::new(),
            store: StoreRef::Exclusive(store),
            mode,
            update_stats: mode == Mode::Train,
            cache: HashMap::new(),
            probes: None,
        }
    }

    /// A pass over borrowed parameters; running statistics are never touched.
    pub fn shared(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Forward {
            tape: Tape::new(),
            store: StoreRef::Shared(store),
            mode,
            update_stats: false,
            cache: HashMap::new(),
            probes: None,
        }
    }

    /// Train-mode pass that leaves running statistics untouched.
    pub fn frozen_stats(mut self) -> Self {
        self.update_stats = false;
        self
    }

    pub fn with_probes(mut self) -> Self {
        self.probes = Some(Vec::new());
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        match &self.store {
            StoreRef::Shared(s) => s,
            StoreRef::Exclusive(s) => s,
        }
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.tape.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    /// Tape leaf for a parameter; repeated uses share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.cache.get(&id) {
            return v;
        }
        let value = self.store().get(id).clone();
        let v = self.tape.param(id, value);
        self.cache.insert(id, v);
        v
    }

    pub(crate) fn probe(&mut self, site: &str, v: Var) {
        if let Some(p) = self.probes.as_mut() {
            p.push(Probe {
                site: site.to_string(),
                scale: self.tape.value(v).clone(),
            });
        }
    }

    pub fn take_probes(&mut self) -> Vec<Probe<T>> {
        self.probes.take().unwrap_or_default()
    }

    pub(crate) fn update_running(&mut self, id: ParamId, batch: &[T]) {
        if !self.update_stats {
            return;
        }
        let StoreRef::Exclusive(store) = &mut self.store else {
            return;
        };
        let m = T::of(crate::kernels::BN_MOMENTUM);
        for (r, &b) in store.get_mut(id).data_mut().iter_mut().zip(batch) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}

/// Registers parameters with deterministic initial values.
pub struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal weights for a layer with the given fan-in.
    pub fn he_normal(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| dist.sample(&mut self.rng) as f32);
        self.store.add_param(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f32) -> Result<ParamId> {
        self.store.add_param(name, Tensor::full(shape, v))
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], v: f32) -> Result<ParamId> {
        self.store.add_buffer(name, Tensor::full(shape, v))
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
