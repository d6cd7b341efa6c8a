//! The two stacked encoder/decoder networks and their checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::kernels::ConvSpec;
use crate::nn::{
    join, AgResidual, BlockOptions, Builder, Conv, Forward, GatingSignal, Mkrc, Mode, Probe, SeAspp, Tag, Tam,
};
use crate::params::ParamStore;
use crate::tape::Var;
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DUNP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub levels: usize,
    pub base_channels: usize,
    /// `(H, W)`.
    pub input_size: (usize, usize),
    pub in_channels: usize,
    pub mkrc_on: bool,
    pub tam_on: bool,
    pub tag_on: bool,
    /// `false` keeps only the first network (plain baseline).
    pub dual: bool,
    /// Weight of the auxiliary loss on mask 1.
    pub deep_supervision_weight: f64,
    pub se_reduction: usize,
    pub spatial_kernel: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            levels: 4,
            base_channels: 16,
            input_size: (256, 256),
            in_channels: 3,
            mkrc_on: true,
            tam_on: true,
            tag_on: true,
            dual: true,
            deep_supervision_weight: 1.0,
            se_reduction: 4,
            spatial_kernel: 7,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        ensure!(self.levels >= 1 && self.levels <= 8, "levels must be in 1..=8, got {}", self.levels);
        let m = 1usize << self.levels;
        ensure!(
            h > 0 && w > 0 && h % m == 0 && w % m == 0,
            "input size {h}x{w} is not divisible by 2^{} = {m}",
            self.levels
        );
        ensure!(
            self.in_channels == 1 || self.in_channels == 3,
            "in_channels must be 1 or 3, got {}",
            self.in_channels
        );
        ensure!(
            self.base_channels >= 2 && self.base_channels % 2 == 0,
            "base_channels must be even and >= 2, got {}",
            self.base_channels
        );
        ensure!(
            self.width(self.levels) % 4 == 0,
            "bottleneck width {} must be divisible by 4",
            self.width(self.levels)
        );
        ensure!(self.se_reduction >= 1, "se_reduction must be >= 1");
        ensure!(
            self.spatial_kernel % 2 == 1,
            "spatial_kernel must be odd, got {}",
            self.spatial_kernel
        );
        ensure!(
            self.deep_supervision_weight >= 0.0 && self.deep_supervision_weight.is_finite(),
            "deep_supervision_weight must be finite and >= 0"
        );
        Ok(())
    }

    /// Channel width at level `i`.
    pub fn width(&self, i: usize) -> usize {
        self.base_channels << i
    }

    fn block_options(&self) -> BlockOptions {
        BlockOptions {
            se_reduction: self.se_reduction,
            spatial_kernel: self.spatial_kernel,
            tam_on: self.tam_on,
        }
    }

    /// Canonical JSON text (field order fixed by the struct).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Per-level skip features plus the pooled bottom feature.
#[derive(Debug, Clone)]
pub struct EncoderFeatures {
    pub skips: Vec<Var>,
    pub bottom: Var,
}

/// `levels` stages of AG-residual followed by 2×2 max-pooling.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: Vec<AgResidual>,
}

impl Encoder {
    fn new(b: &mut Builder, prefix: &str, cfg: &NetworkConfig) -> Result<Self> {
        let opts = cfg.block_options();
        let mut stages = Vec::with_capacity(cfg.levels);
        let mut cin = cfg.in_channels;
        for i in 0..cfg.levels {
            stages.push(AgResidual::new(b, &join(prefix, &format!("l{i}")), cin, cfg.width(i), opts)?);
            cin = cfg.width(i);
        }
        Ok(Encoder { stages })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<EncoderFeatures> {
        let mut skips = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for s in &self.stages {
            let y = s.forward(f, h)?;
            skips.push(y);
            h = f.tape.maxpool2d(y)?;
        }
        Ok(EncoderFeatures { skips, bottom: h })
    }
}

/// MKRC → SE-ASPP → TAM.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub mkrc: Mkrc,
    pub aspp: SeAspp,
    pub tam: Tam,
}

impl Bottleneck {
    fn new(b: &mut Builder, prefix: &str, cfg: &NetworkConfig) -> Result<Self> {
        let cin = cfg.width(cfg.levels - 1);
        let c = cfg.width(cfg.levels);
        Ok(Bottleneck {
            mkrc: Mkrc::new(b, &join(prefix, "mkrc"), cin, c, cfg.mkrc_on)?,
            aspp: SeAspp::new(b, &join(prefix, "aspp"), c, c, cfg.se_reduction)?,
            tam: Tam::new(b, &join(prefix, "tam"), c, c, cfg.se_reduction, cfg.spatial_kernel, cfg.tam_on)?,
        })
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<Var> {
        let h = self.mkrc.forward(f, x)?;
        let h = self.aspp.forward(f, h)?;
        self.tam.forward(f, h)
    }
}

/// One decoder level: gate, upsample, attend each skip source, concat, AG-residual.
#[derive(Debug, Clone)]
pub struct DecoderLevel {
    pub level: usize,
    pub gate: Option<GatingSignal>,
    /// One gate per skip source; `None` passes the skip through unchanged.
    pub tags: Vec<Option<Tag>>,
    pub block: AgResidual,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    /// Deepest level first.
    pub levels: Vec<DecoderLevel>,
}

impl Decoder {
    fn new(b: &mut Builder, prefix: &str, cfg: &NetworkConfig, sources: usize) -> Result<Self> {
        let opts = cfg.block_options();
        let mut levels = Vec::with_capacity(cfg.levels);
        for i in (0..cfg.levels).rev() {
            let p = join(prefix, &format!("l{i}"));
            let c_in = cfg.width(i + 1);
            let c = cfg.width(i);
            let gate = if cfg.tag_on {
                Some(GatingSignal::new(b, &join(&p, "gate"), c_in, c)?)
            } else {
                None
            };
            let tags = (0..sources)
                .map(|k| {
                    if cfg.tag_on {
                        Tag::new(b, &join(&p, &format!("tag{}", k + 1)), c, c, opts).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let block = AgResidual::new(b, &join(&p, "block"), c_in + sources * c, c, opts)?;
            levels.push(DecoderLevel {
                level: i,
                gate,
                tags,
                block,
            });
        }
        Ok(Decoder { levels })
    }

    /// `skips[k][i]` is the level-`i` skip of source `k`.
    pub fn forward<T: Real>(&self, f: &mut Forward<T>, bottom: Var, skips: &[&[Var]]) -> Result<Var> {
        let mut d = bottom;
        for lvl in &self.levels {
            let g = match &lvl.gate {
                Some(g) => Some(g.forward(f, d)?),
                None => None,
            };
            let up = f.tape.upsample2x(d)?;
            let mut parts = vec![up];
            for (tag, src) in lvl.tags.iter().zip(skips) {
                let s = src[lvl.level];
                parts.push(match (tag, g) {
                    (Some(t), Some(g)) => t.forward(f, s, g)?,
                    _ => s,
                });
            }
            let cat = f.tape.concat(&parts)?;
            d = lvl.block.forward(f, cat)?;
        }
        Ok(d)
    }
}

#[derive(Debug, Clone)]
pub struct SubNetwork {
    pub encoder: Encoder,
    pub bottleneck: Bottleneck,
    pub decoder: Decoder,
    pub head: Conv,
}

impl SubNetwork {
    fn new(b: &mut Builder, prefix: &str, cfg: &NetworkConfig, sources: usize) -> Result<Self> {
        Ok(SubNetwork {
            encoder: Encoder::new(b, &join(prefix, "enc"), cfg)?,
            bottleneck: Bottleneck::new(b, &join(prefix, "bottleneck"), cfg)?,
            decoder: Decoder::new(b, &join(prefix, "dec"), cfg, sources)?,
            head: Conv::new(b, &join(prefix, "head"), ConvSpec::new(cfg.width(0), 1, 1))?,
        })
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct OutputVars {
    pub mask1: Var,
    /// Equal to `mask1` for a single-network model.
    pub mask2: Var,
    /// `x ⊙ mask1`, absent for a single-network model.
    pub net2_input: Option<Var>,
    pub skips1: Vec<Var>,
    pub skips2: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct ModelOutputs<T> {
    pub mask1: Tensor<T>,
    pub mask2: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub cfg: NetworkConfig,
    pub net1: SubNetwork,
    pub net2: Option<SubNetwork>,
}

impl Network {
    pub fn forward<T: Real>(&self, f: &mut Forward<T>, x: Var) -> Result<OutputVars> {
        let [_, c, h, w] = f.value(x).dims4()?;
        let (eh, ew) = self.cfg.input_size;
        ensure!(
            c == self.cfg.in_channels && h == eh && w == ew,
            "input is {c}x{h}x{w}, model expects {}x{eh}x{ew}",
            self.cfg.in_channels
        );
        let e1 = self.net1.encoder.forward(f, x)?;
        let b1 = self.net1.bottleneck.forward(f, e1.bottom)?;
        let d1 = self.net1.decoder.forward(f, b1, &[&e1.skips])?;
        let z1 = self.net1.head.forward(f, d1)?;
        let mask1 = f.tape.sigmoid(z1);
        let Some(net2) = &self.net2 else {
            return Ok(OutputVars {
                mask1,
                mask2: mask1,
                net2_input: None,
                skips1: e1.skips,
                skips2: Vec::new(),
            });
        };
        let x2 = f.tape.mul(x, mask1)?;
        let e2 = net2.encoder.forward(f, x2)?;
        let b2 = net2.bottleneck.forward(f, e2.bottom)?;
        let d2 = net2.decoder.forward(f, b2, &[&e1.skips, &e2.skips])?;
        let z2 = net2.head.forward(f, d2)?;
        let mask2 = f.tape.sigmoid(z2);
        Ok(OutputVars {
            mask1,
            mask2,
            net2_input: Some(x2),
            skips1: e1.skips,
            skips2: e2.skips,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub params: usize,
}

/// A built network with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn build(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder::new(&mut params, cfg.seed);
        let net1 = SubNetwork::new(&mut b, "net1", cfg, 1)?;
        let net2 = if cfg.dual {
            Some(SubNetwork::new(&mut b, "net2", cfg, 2)?)
        } else {
            None
        };
        Ok(Model {
            network: Network {
                cfg: cfg.clone(),
                net1,
                net2,
            },
            params,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.network.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// One row per trainable tensor, in registration order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        self.params
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| SummaryRow {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                params: e.value.numel(),
            })
            .collect()
    }

    /// Eval-mode prediction; never mutates the model.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<ModelOutputs<f32>> {
        let mut f = Forward::shared(&self.params, Mode::Eval);
        let xv = f.input(x.clone());
        let out = self.network.forward(&mut f, xv)?;
        Ok(ModelOutputs {
            mask1: f.value(out.mask1).clone(),
            mask2: f.value(out.mask2).clone(),
        })
    }

    /// Eval-mode prediction that also returns every attention scale map.
    pub fn predict_with_probes(&self, x: &Tensor<f32>) -> Result<(ModelOutputs<f32>, Vec<Probe<f32>>)> {
        let mut f = Forward::shared(&self.params, Mode::Eval).with_probes();
        let xv = f.input(x.clone());
        let out = self.network.forward(&mut f, xv)?;
        let outputs = ModelOutputs {
            mask1: f.value(out.mask1).clone(),
            mask2: f.value(out.mask2).clone(),
        };
        Ok((outputs, f.take_probes()))
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        let json = self.config().to_canonical_json();
        let mut head = Vec::new();
        head.extend_from_slice(CHECKPOINT_MAGIC);
        head.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        head.extend_from_slice(&(json.len() as u64).to_le_bytes());
        head.extend_from_slice(json.as_bytes());
        head.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        out.write_all(&head)?;
        for e in self.params.entries() {
            let mut rec = Vec::with_capacity(e.name.len() + 4);
            rec.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            rec.extend_from_slice(e.name.as_bytes());
            out.write_all(&rec)?;
            e.value.write_dump(out)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u64(input)? as usize;
        let json = read_string(input, len)?;
        let cfg: NetworkConfig = serde_json::from_str(&json)?;
        let mut model = Model::build(&cfg)?;
        let count = read_u64(input)? as usize;
        if count != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, config builds {}",
                model.params.len()
            )));
        }
        for _ in 0..count {
            let len = read_u32(input)? as usize;
            let name = read_string(input, len)?;
            let t = Tensor::<f32>::read_dump(input)?;
            let id = model
                .params
                .id_of(&name)
                .ok_or_else(|| Error::Format(format!("unknown tensor {name}")))?;
            let dst = model.params.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Model::read_checkpoint(&mut bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    if len > 1 << 20 {
        return Err(Error::Format(format!("implausible string length {len}")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Format(e.to_string()))
}
