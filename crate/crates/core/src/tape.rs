//! Wengert-list reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its output value plus whatever the
//! backward rule needs. Nodes only reference earlier nodes, so the list is
//! always in topological order and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use crate::error::{ensure, Error, Result};
use crate::kernels::{self, ConvSpec};
use crate::params::ParamId;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
    },
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelMean {
        x: Var,
    },
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2x {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleChannels {
        x: Var,
        s: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Scale {
        x: Var,
        k: T,
    },
    Bce {
        p: Var,
        target: Tensor<T>,
        clamp: T,
    },
    Dice {
        p: Var,
        target: Tensor<T>,
        eps: T,
    },
    #[cfg(test)]
    FaultySquare {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to any node; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Parameter gradients in parameter-id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<T>> {
        self.params
    }
}

fn same_nhw(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a[0] == b[0] && a[2..] == b[2..]
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *v;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients still flow to it for inspection.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }))
    }

    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = kernels::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalAvgPool { x }))
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::global_max_pool(self.value(x))?;
        Ok(self.push(out, Op::GlobalMaxPool { x, argmax }))
    }

    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let out = kernels::channel_mean(self.value(x))?;
        Ok(self.push(out, Op::ChannelMean { x }))
    }

    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::channel_max(self.value(x))?;
        Ok(self.push(out, Op::ChannelMax { x, argmax }))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let out = kernels::upsample_bilinear2x(self.value(x))?;
        Ok(self.push(out, Op::Upsample2x { x }))
    }

    /// Batch norm with explicit statistics. `batch_stats` marks `mean`/`var`
    /// as computed from `x` itself (training mode), which changes the backward rule.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        batch_stats: bool,
    ) -> Result<Var> {
        let [n, c, _, _] = self.value(x).dims4()?;
        ensure!(n >= 1, "batch norm over an empty batch");
        ensure!(
            mean.len() == c && var.len() == c,
            "batch-norm statistics length does not match channel count {c}"
        );
        let eps = T::of(kernels::BN_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::batch_norm_apply(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            mean,
            &inv_std,
        )?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid_scalar);
        self.push(out, Op::Sigmoid { x })
    }

    /// Concatenate along axis 1 (channels for NCHW, features for `[N, F]`).
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        ensure!(!xs.is_empty(), "concat of an empty list");
        let first = self.value(xs[0]).shape().to_vec();
        ensure!(first.len() >= 2, "concat needs rank >= 2, got {first:?}");
        let mut width = 0;
        for &v in xs {
            let s = self.value(v).shape();
            ensure!(
                same_nhw(s, &first),
                "concat spatial/batch mismatch: {s:?} vs {first:?}"
            );
            width += s[1];
        }
        let outer = first[0];
        let inner: usize = first[2..].iter().product();
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[o * c * inner..(o + 1) * c * inner]);
            }
        }
        let mut shape = first;
        shape[1] = width;
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { xs: xs.to_vec() }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure!(
            ta.shape() == tb.shape(),
            "add shape mismatch: {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let out = Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect(),
        );
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Elementwise product; a side with one channel is broadcast over the other's channels.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        ensure!(
            sa.len() >= 2 && same_nhw(sa, sb),
            "mul shape mismatch: {sa:?} vs {sb:?}"
        );
        let (ca, cb) = (sa[1], sb[1]);
        ensure!(
            ca == cb || ca == 1 || cb == 1,
            "mul channel mismatch: {ca} vs {cb} (only 1-channel broadcast is allowed)"
        );
        let c = ca.max(cb);
        let outer = sa[0];
        let inner: usize = sa[2..].iter().product();
        let mut data = Vec::with_capacity(outer * c * inner);
        for o in 0..outer {
            for ci in 0..c {
                let ra = (o * ca + if ca == 1 { 0 } else { ci }) * inner;
                let rb = (o * cb + if cb == 1 { 0 } else { ci }) * inner;
                for i in 0..inner {
                    data.push(ta.data()[ra + i] * tb.data()[rb + i]);
                }
            }
        }
        let mut shape = sa.to_vec();
        shape[1] = c;
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul { a, b }))
    }

    /// `x[N,C,H,W] * s[N,C]` broadcast over space.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let [n, c, h, w] = tx.dims4()?;
        ensure!(
            ts.shape() == [n, c],
            "channel scale shape {:?} does not match [{n}, {c}]",
            ts.shape()
        );
        let hw = h * w;
        let mut data = Vec::with_capacity(tx.numel());
        for (plane, &k) in tx.data().chunks_exact(hw).zip(ts.data()) {
            data.extend(plane.iter().map(|&v| v * k));
        }
        Ok(self.push(
            Tensor::from_parts(tx.shape().to_vec(), data),
            Op::ScaleChannels { x, s },
        ))
    }

    /// `y[N,out] = x[N,in] · w[out,in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        ensure!(tx.rank() == 2, "linear input must be [N, F], got {:?}", tx.shape());
        ensure!(tw.rank() == 2, "linear weight must be rank 2, got {:?}", tw.shape());
        let (n, fin) = (tx.shape()[0], tx.shape()[1]);
        let fout = tw.shape()[0];
        ensure!(
            tw.shape()[1] == fin,
            "linear input feature dimension is {fin}, weight expects {}",
            tw.shape()[1]
        );
        ensure!(tb.shape() == [fout], "linear bias shape {:?} != [{fout}]", tb.shape());
        let mut data = Vec::with_capacity(n * fout);
        for r in 0..n {
            let row = &tx.data()[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let wr = &tw.data()[o * fin..(o + 1) * fin];
                let mut acc = tb.data()[o];
                for (a, b) in row.iter().zip(wr) {
                    acc += *a * *b;
                }
                data.push(acc);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, fout], data), Op::Linear { x, w, b }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale { x, k })
    }

    /// Mean binary cross-entropy against a fixed {0,1} target, `p` clamped to `[clamp, 1-clamp]`.
    pub fn bce(&mut self, p: Var, target: &Tensor<T>, clamp: T) -> Result<Var> {
        let tp = self.value(p);
        ensure!(
            tp.shape() == target.shape(),
            "bce shape mismatch: {:?} vs {:?}",
            tp.shape(),
            target.shape()
        );
        let value = crate::loss::bce_value(tp.data(), target.data(), clamp)?;
        Ok(self.push(
            Tensor::scalar(value),
            Op::Bce {
                p,
                target: target.clone(),
                clamp,
            },
        ))
    }

    /// Soft Dice loss with squared denominators.
    pub fn dice(&mut self, p: Var, target: &Tensor<T>, eps: T) -> Result<Var> {
        let tp = self.value(p);
        ensure!(
            tp.shape() == target.shape(),
            "dice shape mismatch: {:?} vs {:?}",
            tp.shape(),
            target.shape()
        );
        let value = crate::loss::dice_value(tp.data(), target.data(), eps);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Dice {
                p,
                target: target.clone(),
                eps,
            },
        ))
    }

    #[cfg(test)]
    pub(crate) fn faulty_square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::FaultySquare { x })
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Value(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        let mut params = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    accumulate(params.entry(*id).or_insert(None), g.clone());
                }
                Op::Conv2d { x, w, b, spec } => {
                    let cg =
                        kernels::conv2d_backward(self.value(*x), self.value(*w), &g, spec)?;
                    accumulate(&mut grads[x.0], cg.dx);
                    accumulate(&mut grads[w.0], cg.dw);
                    if let Some(b) = b {
                        accumulate(&mut grads[b.0], cg.db);
                    }
                }
                Op::MaxPool2 { x, argmax } | Op::ChannelMax { x, argmax } => {
                    let dx = kernels::scatter_argmax(self.value(*x).shape(), argmax, g.data());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::GlobalMaxPool { x, argmax } => {
                    let dx = kernels::scatter_argmax(self.value(*x).shape(), argmax, g.data());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::GlobalAvgPool { x } => {
                    let dx = kernels::global_avg_pool_backward(self.value(*x).shape(), g.data());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ChannelMean { x } => {
                    let dx = kernels::channel_mean_backward(self.value(*x).shape(), g.data());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Upsample2x { x } => {
                    let dx =
                        kernels::upsample_bilinear2x_backward(self.value(*x).shape(), g.data());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let bg = kernels::batch_norm_backward(
                        xhat,
                        self.value(*gamma).data(),
                        inv_std,
                        &g,
                        *batch_stats,
                    )?;
                    accumulate(&mut grads[x.0], bg.dx);
                    accumulate(&mut grads[gamma.0], bg.dgamma);
                    accumulate(&mut grads[beta.0], bg.dbeta);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let dx = Tensor::from_parts(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(xv.data())
                            .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                            .collect(),
                    );
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sigmoid { x } => {
                    let dx = Tensor::from_parts(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(node.value.data())
                            .map(|(&d, &s)| d * s * (T::one() - s))
                            .collect(),
                    );
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Concat { xs } => {
                    let shape = g.shape();
                    let outer = shape[0];
                    let width = shape[1];
                    let inner: usize = shape[2..].iter().product();
                    let mut offset = 0;
                    for &v in xs {
                        let vs = self.value(v).shape();
                        let c = vs[1];
                        let mut part = Vec::with_capacity(outer * c * inner);
                        for o in 0..outer {
                            let start = (o * width + offset) * inner;
                            part.extend_from_slice(&g.data()[start..start + c * inner]);
                        }
                        accumulate(&mut grads[v.0], Tensor::from_parts(vs.to_vec(), part));
                        offset += c;
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (ca, cb) = (ta.shape()[1], tb.shape()[1]);
                    let c = g.shape()[1];
                    let outer = g.shape()[0];
                    let inner: usize = g.shape()[2..].iter().product();
                    let mut da = Tensor::zeros(ta.shape());
                    let mut db = Tensor::zeros(tb.shape());
                    for o in 0..outer {
                        for ci in 0..c {
                            let ra = (o * ca + if ca == 1 { 0 } else { ci }) * inner;
                            let rb = (o * cb + if cb == 1 { 0 } else { ci }) * inner;
                            let rg = (o * c + ci) * inner;
                            for k in 0..inner {
                                let gv = g.data()[rg + k];
                                da.data_mut()[ra + k] += gv * tb.data()[rb + k];
                                db.data_mut()[rb + k] += gv * ta.data()[ra + k];
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::ScaleChannels { x, s } => {
                    let (tx, ts) = (self.value(*x), self.value(*s));
                    let hw: usize = tx.shape()[2..].iter().product();
                    let mut dx = Vec::with_capacity(tx.numel());
                    let mut ds = Vec::with_capacity(ts.numel());
                    for ((gp, xp), &k) in g
                        .data()
                        .chunks_exact(hw)
                        .zip(tx.data().chunks_exact(hw))
                        .zip(ts.data())
                    {
                        dx.extend(gp.iter().map(|&v| v * k));
                        ds.push(gp.iter().zip(xp).map(|(&a, &b)| a * b).sum::<T>());
                    }
                    accumulate(&mut grads[x.0], Tensor::from_parts(tx.shape().to_vec(), dx));
                    accumulate(&mut grads[s.0], Tensor::from_parts(ts.shape().to_vec(), ds));
                }
                Op::Linear { x, w, b } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (n, fin) = (tx.shape()[0], tx.shape()[1]);
                    let fout = tw.shape()[0];
                    let mut dx = vec![T::zero(); n * fin];
                    let mut dw = vec![T::zero(); fout * fin];
                    let mut db = vec![T::zero(); fout];
                    for r in 0..n {
                        for o in 0..fout {
                            let gv = g.data()[r * fout + o];
                            db[o] += gv;
                            for f in 0..fin {
                                dw[o * fin + f] += gv * tx.data()[r * fin + f];
                                dx[r * fin + f] += gv * tw.data()[o * fin + f];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::from_parts(vec![n, fin], dx));
                    accumulate(&mut grads[w.0], Tensor::from_parts(vec![fout, fin], dw));
                    accumulate(&mut grads[b.0], Tensor::from_parts(vec![fout], db));
                }
                Op::Sum { x } => {
                    let dx = Tensor::full(self.value(*x).shape(), g.item());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Scale { x, k } => {
                    accumulate(&mut grads[x.0], g.map(|v| v * *k));
                }
                Op::Bce { p, target, clamp } => {
                    let dp = crate::loss::bce_grad(self.value(*p).data(), target.data(), *clamp);
                    let gv = g.item();
                    let dp = Tensor::from_parts(
                        target.shape().to_vec(),
                        dp.into_iter().map(|v| v * gv).collect(),
                    );
                    accumulate(&mut grads[p.0], dp);
                }
                Op::Dice { p, target, eps } => {
                    let dp = crate::loss::dice_grad(self.value(*p).data(), target.data(), *eps);
                    let gv = g.item();
                    let dp = Tensor::from_parts(
                        target.shape().to_vec(),
                        dp.into_iter().map(|v| v * gv).collect(),
                    );
                    accumulate(&mut grads[p.0], dp);
                }
                #[cfg(test)]
                Op::FaultySquare { x } => {
                    // Deliberately wrong: the true rule is 2·x·g.
                    let xv = self.value(*x);
                    let dx = Tensor::from_parts(
                        g.shape().to_vec(),
                        g.data().iter().zip(xv.data()).map(|(&d, &v)| d * v).collect(),
                    );
                    accumulate(&mut grads[x.0], dx);
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            nodes: grads,
            params: params
                .into_iter()
                .filter_map(|(k, v)| v.map(|t| (k, t)))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let mut tape = Tape::<f64>::new();
        let xv = Tensor::from_fn(&[1, 2, 2, 2], |i| 0.5 * i as f64 - 1.0);
        let x = tape.leaf(xv.clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        for (d, v) in g.wrt(x).unwrap().data().iter().zip(xv.data()) {
            assert_eq!(*d, 2.0 * v);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Value(_))));
    }

    #[test]
    fn concat_and_broadcast_mul() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let b = tape.leaf(Tensor::from_fn(&[1, 3, 2, 2], |i| 100.0 + i as f64));
        let c = tape.leaf(Tensor::from_fn(&[1, 1, 2, 2], |i| -(i as f64)));
        let ab = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(ab).shape(), &[1, 5, 2, 2]);

        let left = tape.concat(&[a, ab]).unwrap();
        let bc = tape.concat(&[b, c]).unwrap();
        let ab_c = tape.concat(&[ab, c]).unwrap();
        let a_bc = tape.concat(&[a, bc]).unwrap();
        assert_eq!(tape.value(ab_c).data(), tape.value(a_bc).data());
        assert_eq!(tape.value(left).shape()[1], 7);

        let x = tape.leaf(Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64 * 0.1));
        let m = tape.leaf(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64));
        let y = tape.mul(x, m).unwrap();
        let (tx, tm, ty) = (tape.value(x), tape.value(m), tape.value(y));
        for n in 0..2 {
            for ch in 0..3 {
                for yy in 0..2 {
                    for xx in 0..2 {
                        assert_eq!(ty.at4(n, ch, yy, xx), tx.at4(n, ch, yy, xx) * tm.at4(n, 0, yy, xx));
                    }
                }
            }
        }
        let ones = tape.leaf(Tensor::ones(&[2, 1, 2, 2]));
        let same = tape.mul(x, ones).unwrap();
        assert_eq!(tape.value(same).data(), tape.value(x).data());

        let bad = tape.leaf(Tensor::ones(&[2, 1, 3, 2]));
        assert!(tape.mul(x, bad).is_err());
        assert!(tape.concat(&[x, bad]).is_err());
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 2.0, 0.0]).unwrap());
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0, 0.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[2], 0.5);
    }
}
