//! Channel and spatial recalibration modules.
//!
//! All three attention maps pass through a sigmoid and so lie in (0, 1).
//! When probes are enabled on the [`Forward`] each map is recorded under the
//! module's parameter prefix.

use super::layers::{Conv, ConvBn, Linear};
use super::{join, Builder, Forward};
use crate::error::{ensure, Result};
use crate::kernels::ConvSpec;
use crate::tape::Var;
use crate::tensor::Real;

/// Bottleneck width of an SE-style map: `max(1, channels / reduction)`.
pub fn bottleneck_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

/// Squeeze-and-excitation: `x * sigmoid(W2 relu(W1 gap(x)))` per channel.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub site: String,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SeBlock {
    pub fn new(b: &mut Builder, prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        ensure!(channels >= 1, "SE block needs at least one channel");
        let mid = bottleneck_width(channels, reduction);
        Ok(SeBlock {
            site: prefix.to_string(),
            fc1: Linear::new(b, &join(prefix, "fc1"), channels, mid)?,
            fc2: Linear::new(b, &join(prefix, "fc2"), mid, channels)?,
        })
    }

    pub fn scale<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let v = f.tape.global_avg_pool(x)?;
        let h = self.fc1.forward(f, v)?;
        let h = f.tape.relu(h);
        let h = self.fc2.forward(f, h)?;
        let s = f.tape.sigmoid(h);
        f.probe(&self.site, s);
        Ok(s)
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let s = self.scale(f, x)?;
        f.tape.scale_channels(x, s)
    }
}

/// Average- and max-pooled descriptors through a shared bottleneck,
/// concatenated and mapped back to one scale per channel.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub site: String,
    pub fc1: Linear,
    pub fc2: Linear,
    pub fuse: Linear,
}

impl ChannelAttention {
    pub fn new(b: &mut Builder, prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        ensure!(channels >= 1, "channel attention needs at least one channel");
        let mid = bottleneck_width(channels, reduction);
        Ok(ChannelAttention {
            site: prefix.to_string(),
            fc1: Linear::new(b, &join(prefix, "fc1"), channels, mid)?,
            fc2: Linear::new(b, &join(prefix, "fc2"), mid, channels)?,
            fuse: Linear::new(b, &join(prefix, "fuse"), 2 * channels, channels)?,
        })
    }

    fn shared<T: Real>(&self, f: &mut Forward<T>, v: Var) -> Result<Var> {
        let h = self.fc1.forward(f, v)?;
        let h = f.tape.relu(h);
        self.fc2.forward(f, h)
    }

    pub fn scale<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let avg = f.tape.global_avg_pool(x)?;
        let max = f.tape.global_max_pool(x)?;
        let a = self.shared(f, avg)?;
        let m = self.shared(f, max)?;
        let both = f.tape.concat(&[a, m])?;
        let z = self.fuse.forward(f, both)?;
        let s = f.tape.sigmoid(z);
        f.probe(&self.site, s);
        Ok(s)
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let s = self.scale(f, x)?;
        f.tape.scale_channels(x, s)
    }
}

/// `x * sigmoid(conv_k([mean_c(x), max_c(x)]))` with a one-channel map.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub site: String,
    pub conv: Conv,
}

impl SpatialAttention {
    pub fn new(b: &mut Builder, prefix: &str, kernel: usize) -> Result<Self> {
        Ok(SpatialAttention {
            site: prefix.to_string(),
            conv: Conv::new(b, &join(prefix, "conv"), ConvSpec::new(2, 1, kernel))?,
        })
    }

    pub fn scale<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let mean = f.tape.channel_mean(x)?;
        let max = f.tape.channel_max(x)?;
        let pooled = f.tape.concat(&[mean, max])?;
        let z = self.conv.forward(f, pooled)?;
        let m = f.tape.sigmoid(z);
        f.probe(&self.site, m);
        Ok(m)
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let m = self.scale(f, x)?;
        f.tape.mul(x, m)
    }
}

#[derive(Debug, Clone)]
pub struct TamBranches {
    pub se: SeBlock,
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
    pub fuse: ConvBn,
}

/// Triple attention: SE, channel and spatial branches in parallel, fused by
/// channel concatenation and a 1×1 conv → BN → ReLU. Disabled means identity.
#[derive(Debug, Clone)]
pub struct Tam {
    pub branches: Option<TamBranches>,
}

impl Tam {
    pub fn new(
        b: &mut Builder,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        reduction: usize,
        spatial_kernel: usize,
        enabled: bool,
    ) -> Result<Self> {
        if !enabled {
            ensure!(
                in_channels == out_channels,
                "a disabled TAM is an identity and needs in_channels == out_channels ({in_channels} != {out_channels})"
            );
            return Ok(Tam { branches: None });
        }
        Ok(Tam {
            branches: Some(TamBranches {
                se: SeBlock::new(b, &join(prefix, "se"), in_channels, reduction)?,
                channel: ChannelAttention::new(b, &join(prefix, "ca"), in_channels, reduction)?,
                spatial: SpatialAttention::new(b, &join(prefix, "sa"), spatial_kernel)?,
                fuse: ConvBn::relu(
                    b,
                    &join(prefix, "fuse"),
                    ConvSpec::new(3 * in_channels, out_channels, 1),
                )?,
            }),
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let Some(br) = &self.branches else {
            return Ok(x);
        };
        let a = br.se.forward(f, x)?;
        let c = br.channel.forward(f, x)?;
        let s = br.spatial.forward(f, x)?;
        let cat = f.tape.concat(&[a, c, s])?;
        br.fuse.forward(f, cat)
    }
}
