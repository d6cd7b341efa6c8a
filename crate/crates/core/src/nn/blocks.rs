use super::attention::{ChannelAttention, SeBlock, SpatialAttention, Tam};
use super::layers::{Conv, ConvBn};
use super::{join, Builder, Forward};
use crate::error::{ensure, Result};
use crate::kernels::ConvSpec;
use crate::tape::Var;
use crate::tensor::Real;

/// Kernel sizes of the four parallel MKRC branches.
pub const MKRC_KERNELS: [usize; 4] = [1, 3, 5, 7];

/// Dilation rates of the seven SE-ASPP branches; the first is a 1×1 conv.
pub const SE_ASPP_DILATIONS: [usize; 7] = [1, 1, 2, 6, 10, 13, 16];

/// Shared knobs for the attention-bearing blocks.
#[derive(Debug, Clone, Copy)]
pub struct BlockOptions {
    pub se_reduction: usize,
    pub spatial_kernel: usize,
    pub tam_on: bool,
}

/// Two 3×3 conv-BN-ReLU layers beside a 1×1 conv-BN-ReLU shortcut, each
/// `out/2` wide, concatenated, passed through ReLU and then TAM.
#[derive(Debug, Clone)]
pub struct AgResidual {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub shortcut: ConvBn,
    pub tam: Tam,
}

impl AgResidual {
    pub fn new(
        b: &mut Builder,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        opts: BlockOptions,
    ) -> Result<Self> {
        ensure!(
            out_channels >= 2 && out_channels % 2 == 0,
            "AG-residual out_channels must be even, got {out_channels}"
        );
        let half = out_channels / 2;
        Ok(AgResidual {
            conv1: ConvBn::relu(b, &join(prefix, "conv1"), ConvSpec::new(in_channels, half, 3))?,
            conv2: ConvBn::relu(b, &join(prefix, "conv2"), ConvSpec::new(half, half, 3))?,
            shortcut: ConvBn::relu(b, &join(prefix, "shortcut"), ConvSpec::new(in_channels, half, 1))?,
            tam: Tam::new(
                b,
                &join(prefix, "tam"),
                out_channels,
                out_channels,
                opts.se_reduction,
                opts.spatial_kernel,
                opts.tam_on,
            )?,
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let m = self.conv1.forward(f, x)?;
        let m = self.conv2.forward(f, m)?;
        let s = self.shortcut.forward(f, x)?;
        let cat = f.tape.concat(&[m, s])?;
        let y = f.tape.relu(cat);
        self.tam.forward(f, y)
    }
}

#[derive(Debug, Clone)]
pub struct MkrcBranches {
    pub branches: Vec<ConvBn>,
    pub fuse: ConvBn,
    pub shortcut: ConvBn,
}

/// Multi-kernel residual convolution, or a single 3×3 conv-BN-ReLU when ablated.
#[derive(Debug, Clone)]
pub enum Mkrc {
    Full(MkrcBranches),
    Plain(ConvBn),
}

impl Mkrc {
    pub fn new(
        b: &mut Builder,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        enabled: bool,
    ) -> Result<Self> {
        if !enabled {
            return Ok(Mkrc::Plain(ConvBn::relu(
                b,
                &join(prefix, "plain"),
                ConvSpec::new(in_channels, out_channels, 3),
            )?));
        }
        ensure!(
            out_channels >= 4 && out_channels % 4 == 0,
            "MKRC out_channels must be divisible by 4, got {out_channels}"
        );
        let quarter = out_channels / 4;
        let half = out_channels / 2;
        let branches = MKRC_KERNELS
            .iter()
            .map(|&k| {
                ConvBn::relu(
                    b,
                    &join(prefix, &format!("k{k}")),
                    ConvSpec::new(in_channels, quarter, k),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mkrc::Full(MkrcBranches {
            branches,
            fuse: ConvBn::relu(b, &join(prefix, "fuse"), ConvSpec::new(out_channels, half, 1))?,
            shortcut: ConvBn::new(
                b,
                &join(prefix, "shortcut"),
                ConvSpec::new(in_channels, half, 1),
                false,
            )?,
        }))
    }

    /// Kernel sizes of the parallel branches (empty when ablated).
    pub fn kernel_sizes(&self) -> Vec<usize> {
        match self {
            Mkrc::Full(m) => m.branches.iter().map(|c| c.conv.spec.kernel_size).collect(),
            Mkrc::Plain(_) => Vec::new(),
        }
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        match self {
            Mkrc::Plain(c) => c.forward(f, x),
            Mkrc::Full(m) => {
                let outs = m
                    .branches
                    .iter()
                    .map(|br| br.forward(f, x))
                    .collect::<Result<Vec<_>>>()?;
                let cat = f.tape.concat(&outs)?;
                let fused = m.fuse.forward(f, cat)?;
                let short = m.shortcut.forward(f, x)?;
                let both = f.tape.concat(&[fused, short])?;
                Ok(f.tape.relu(both))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AsppBranch {
    pub conv: ConvBn,
    pub se: SeBlock,
}

/// Seven parallel (dilated) convolutions, each recalibrated by SE, fused by 1×1 conv-BN-ReLU.
#[derive(Debug, Clone)]
pub struct SeAspp {
    pub branches: Vec<AsppBranch>,
    pub fuse: ConvBn,
}

impl SeAspp {
    pub fn new(
        b: &mut Builder,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        se_reduction: usize,
    ) -> Result<Self> {
        ensure!(
            out_channels >= 4 && out_channels % 4 == 0,
            "SE-ASPP out_channels must be divisible by 4, got {out_channels}"
        );
        let width = out_channels / 4;
        let mut branches = Vec::with_capacity(SE_ASPP_DILATIONS.len());
        for (i, &rate) in SE_ASPP_DILATIONS.iter().enumerate() {
            let k = if i == 0 { 1 } else { 3 };
            let p = join(prefix, &format!("b{i}"));
            branches.push(AsppBranch {
                conv: ConvBn::relu(
                    b,
                    &p,
                    ConvSpec::new(in_channels, width, k).with_dilation(rate),
                )?,
                se: SeBlock::new(b, &join(&p, "se"), width, se_reduction)?,
            });
        }
        Ok(SeAspp {
            fuse: ConvBn::relu(
                b,
                &join(prefix, "fuse"),
                ConvSpec::new(width * branches.len(), out_channels, 1),
            )?,
            branches,
        })
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.branches.iter().map(|br| br.conv.conv.spec.dilation).collect()
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            let y = br.conv.forward(f, x)?;
            outs.push(br.se.forward(f, y)?);
        }
        let cat = f.tape.concat(&outs)?;
        self.fuse.forward(f, cat)
    }
}

/// 1×1 conv-BN-ReLU on the coarser decoder feature.
#[derive(Debug, Clone)]
pub struct GatingSignal {
    pub conv: ConvBn,
}

impl GatingSignal {
    pub fn new(b: &mut Builder, prefix: &str, in_channels: usize, gate_channels: usize) -> Result<Self> {
        Ok(GatingSignal {
            conv: ConvBn::relu(b, &join(prefix, "conv"), ConvSpec::new(in_channels, gate_channels, 1))?,
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        self.conv.forward(f, x)
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }
}

/// Triple attention gate on a skip connection.
///
/// Attention is computed at the gate's (half) resolution: a strided 1×1
/// projection of the skip is added to a 1×1 projection of the gate, ReLU'd,
/// refined by channel, spatial and SE attention in parallel, reduced to one
/// channel, squashed by a sigmoid and bilinearly upsampled back to the skip.
#[derive(Debug, Clone)]
pub struct Tag {
    pub site: String,
    pub theta_x: Conv,
    pub phi_g: Conv,
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
    pub se: SeBlock,
    pub psi: Conv,
    pub inter_channels: usize,
}

impl Tag {
    pub fn new(
        b: &mut Builder,
        prefix: &str,
        skip_channels: usize,
        gate_channels: usize,
        opts: BlockOptions,
    ) -> Result<Self> {
        let inter = (skip_channels / 2).max(1);
        Ok(Tag {
            site: prefix.to_string(),
            theta_x: Conv::new(
                b,
                &join(prefix, "theta_x"),
                ConvSpec::new(skip_channels, inter, 1).with_stride(2),
            )?,
            phi_g: Conv::new(b, &join(prefix, "phi_g"), ConvSpec::new(gate_channels, inter, 1))?,
            channel: ChannelAttention::new(b, &join(prefix, "ca"), inter, opts.se_reduction)?,
            spatial: SpatialAttention::new(b, &join(prefix, "sa"), opts.spatial_kernel)?,
            se: SeBlock::new(b, &join(prefix, "se"), inter, opts.se_reduction)?,
            psi: Conv::new(b, &join(prefix, "psi"), ConvSpec::new(3 * inter, 1, 1))?,
            inter_channels: inter,
        })
    }

    /// The upsampled attention map α of shape `[N,1,H,W]`.
    pub fn alpha<T: Real>(&self, f: &mut Forward<T>, skip: Var, gate: Var) -> Result<Var> {
        let [_, _, h, w] = f.value(skip).dims4()?;
        let [_, _, gh, gw] = f.value(gate).dims4()?;
        ensure!(
            h % 2 == 0 && w % 2 == 0 && gh * 2 == h && gw * 2 == w,
            "attention gate needs the gate at exactly half the skip resolution: skip {h}x{w}, gate {gh}x{gw}"
        );
        let tx = self.theta_x.forward(f, skip)?;
        let pg = self.phi_g.forward(f, gate)?;
        let sum = f.tape.add(tx, pg)?;
        let a = f.tape.relu(sum);
        let c = self.channel.forward(f, a)?;
        let s = self.spatial.forward(f, a)?;
        let e = self.se.forward(f, a)?;
        let cat = f.tape.concat(&[c, s, e])?;
        let z = self.psi.forward(f, cat)?;
        let coarse = f.tape.sigmoid(z);
        let alpha = f.tape.upsample2x(coarse)?;
        f.probe(&self.site, alpha);
        Ok(alpha)
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, skip: Var, gate: Var) -> Result<Var> {
        let alpha = self.alpha(f, skip, gate)?;
        f.tape.mul(skip, alpha)
    }
}
