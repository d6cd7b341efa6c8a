//! Binary cross-entropy, soft Dice and their sum.
//!
//! The `*_value`/`*_grad` pairs work on raw slices and back the tape ops; the
//! tensor-level functions are for reporting outside a tape.

use crate::error::{ensure, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;
/// Smoothing constant of the Dice ratio.
pub const DICE_EPS: f64 = 1.0;

pub(crate) fn check_binary<T: Real>(y: &[T]) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::Value(format!("target value {v} is not in {{0, 1}}")));
    }
    Ok(())
}

pub(crate) fn bce_value<T: Real>(p: &[T], y: &[T], clamp: T) -> Result<T> {
    check_binary(y)?;
    let hi = T::one() - clamp;
    let mut acc = T::zero();
    for (&pi, &yi) in p.iter().zip(y) {
        let pc = pi.max(clamp).min(hi);
        acc -= yi * pc.ln() + (T::one() - yi) * (T::one() - pc).ln();
    }
    Ok(acc / T::of(p.len() as f64))
}

/// Derivative of the mean BCE; zero where the clamp is active.
pub(crate) fn bce_grad<T: Real>(p: &[T], y: &[T], clamp: T) -> Vec<T> {
    let m = T::of(p.len() as f64);
    let hi = T::one() - clamp;
    p.iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            if pi < clamp || pi > hi {
                T::zero()
            } else {
                (-(yi / pi) + (T::one() - yi) / (T::one() - pi)) / m
            }
        })
        .collect()
}

fn dice_terms<T: Real>(p: &[T], g: &[T], eps: T) -> (T, T) {
    let mut pg = T::zero();
    let mut pp = T::zero();
    let mut gg = T::zero();
    for (&a, &b) in p.iter().zip(g) {
        pg += a * b;
        pp += a * a;
        gg += b * b;
    }
    (T::of(2.0) * pg + eps, pp + gg + eps)
}

pub(crate) fn dice_value<T: Real>(p: &[T], g: &[T], eps: T) -> T {
    let (num, den) = dice_terms(p, g, eps);
    T::one() - num / den
}

pub(crate) fn dice_grad<T: Real>(p: &[T], g: &[T], eps: T) -> Vec<T> {
    let (num, den) = dice_terms(p, g, eps);
    let two = T::of(2.0);
    p.iter()
        .zip(g)
        .map(|(&pi, &gi)| -(two * gi * den - num * two * pi) / (den * den))
        .collect()
}

pub fn bce_loss<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    ensure!(
        p.shape() == y.shape(),
        "bce shape mismatch: {:?} vs {:?}",
        p.shape(),
        y.shape()
    );
    bce_value(p.data(), y.data(), T::of(BCE_CLAMP))
}

pub fn dice_loss<T: Real>(p: &Tensor<T>, y: &Tensor<T>, eps: T) -> Result<T> {
    ensure!(
        p.shape() == y.shape(),
        "dice shape mismatch: {:?} vs {:?}",
        p.shape(),
        y.shape()
    );
    ensure!(eps > T::zero(), "dice epsilon must be positive");
    Ok(dice_value(p.data(), y.data(), eps))
}

pub fn hybrid_loss<T: Real>(p: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    Ok(bce_loss(p, y)? + dice_loss(p, y, T::of(DICE_EPS))?)
}

/// BCE + Dice recorded on a tape.
pub fn hybrid_on_tape<T: Real>(tape: &mut Tape<T>, p: Var, y: &Tensor<T>) -> Result<Var> {
    let b = tape.bce(p, y, T::of(BCE_CLAMP))?;
    let d = tape.dice(p, y, T::of(DICE_EPS))?;
    tape.add(b, d)
}
