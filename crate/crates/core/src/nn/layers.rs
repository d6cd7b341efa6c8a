use super::{join, Builder, Forward, Mode};
use crate::error::Result;
use crate::kernels::{self, ConvSpec};
use crate::params::ParamId;
use crate::tape::Var;
use crate::tensor::Real;

/// Convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new(b: &mut Builder, prefix: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.in_channels * spec.kernel_size * spec.kernel_size;
        Ok(Conv {
            w: b.he_normal(&join(prefix, "w"), &spec.weight_shape(), fan_in)?,
            b: Some(b.constant(&join(prefix, "b"), &[spec.out_channels], 0.0)?),
            spec,
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let w = f.param(self.w);
        let b = self.b.map(|id| f.param(id));
        f.tape.conv2d(x, w, b, self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(b: &mut Builder, prefix: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: b.constant(&join(prefix, "gamma"), &[channels], 1.0)?,
            beta: b.constant(&join(prefix, "beta"), &[channels], 0.0)?,
            running_mean: b.buffer(&join(prefix, "running_mean"), &[channels], 0.0)?,
            running_var: b.buffer(&join(prefix, "running_var"), &[channels], 1.0)?,
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        match f.mode() {
            Mode::Train => {
                let stats = kernels::batch_stats(f.value(x))?;
                f.update_running(self.running_mean, &stats.mean);
                f.update_running(self.running_var, &stats.var_unbiased);
                f.tape
                    .batch_norm(x, gamma, beta, &stats.mean, &stats.var, true)
            }
            Mode::Eval => {
                let mean = f.store().get(self.running_mean).data().to_vec();
                let var = f.store().get(self.running_var).data().to_vec();
                f.tape.batch_norm(x, gamma, beta, &mean, &var, false)
            }
        }
    }
}

/// Conv → BN, optionally followed by ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new(b: &mut Builder, prefix: &str, spec: ConvSpec, relu: bool) -> Result<Self> {
        Ok(ConvBn {
            conv: Conv::new(b, &join(prefix, "conv"), spec)?,
            bn: BatchNorm::new(b, &join(prefix, "bn"), spec.out_channels)?,
            relu,
        })
    }

    pub fn relu(b: &mut Builder, prefix: &str, spec: ConvSpec) -> Result<Self> {
        Self::new(b, prefix, spec, true)
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(if self.relu { f.tape.relu(y) } else { y })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.spec.out_channels
    }
}

/// Fully connected map on `[N, F]` vectors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(b: &mut Builder, prefix: &str, in_features: usize, out_features: usize) -> Result<Self> {
        Ok(Linear {
            w: b.he_normal(&join(prefix, "w"), &[out_features, in_features], in_features)?,
            b: b.constant(&join(prefix, "b"), &[out_features], 0.0)?,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let w = f.param(self.w);
        let b = f.param(self.b);
        f.tape.linear(x, w, b)
    }
}
