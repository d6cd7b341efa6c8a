use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with bias correction; moments are created lazily per parameter.
#[derive(Debug, Clone, Default)]
pub struct Adam<T> {
    pub step: u64,
    m: BTreeMap<ParamId, Vec<T>>,
    v: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Adam {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn moments(&self, id: ParamId) -> Option<(&[T], &[T])> {
        Some((self.m.get(&id)?.as_slice(), self.v.get(&id)?.as_slice()))
    }

    /// One update of every parameter that has a gradient. Non-finite
    /// gradients abort before any parameter is touched.
    pub fn update(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &BTreeMap<ParamId, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        for (&id, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
            if g.shape() != store.get(id).shape() {
                return Err(Error::config(format!(
                    "gradient shape {:?} does not match {} {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(BETA1), T::of(BETA2));
        let c1 = T::one() - T::of(BETA1.powi(t));
        let c2 = T::one() - T::of(BETA2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(EPS));
        for (&id, g) in grads {
            let n = g.numel();
            let m = self.m.entry(id).or_insert_with(|| vec![T::zero(); n]);
            let v = self.v.entry(id).or_insert_with(|| vec![T::zero(); n]);
            let w = store.get_mut(id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                w[i] = w[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
