//! The cascaded saliency network: backbone pyramid, detail decoder, detail
//! encoder, body decoder and fusion.

pub mod attention;
pub mod layers;

use serde::{Deserialize, Serialize};
use sodnet_tensor::{Graph, NodeId, ParamStore, Scalar, Shape, Tensor};

use crate::error::{Result, SodError};
use crate::grid::{GrayMask, Grid};
use crate::losses::SaliencyMaps;
use crate::preset::{ArchToggles, Cascade, Preset};
use attention::{Mbab, Mdab, Plain, Trace};
use layers::{ensure_finite, resize_like, Builder, Conv, ConvNormAct, ResBlock};

pub const MIN_SIDE: usize = 64;
pub const STRIDE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub arch: ArchToggles,
    /// Channel widths of the four retained backbone stages (strides 4, 8, 16, 32).
    pub widths: [usize; 4],
    /// Width of the stride-2 stem, whose output is not part of the pyramid.
    pub stem: usize,
    pub c_flow: usize,
    pub encoder_stem: usize,
}

impl NetConfig {
    pub fn toy(preset: Preset) -> Self {
        NetConfig { arch: preset.arch(), widths: [16, 32, 64, 128], stem: 16, c_flow: 64, encoder_stem: 16 }
    }
}

/// Reject sizes the stride-32 pyramid cannot represent.
pub fn check_input_size(h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(STRIDE) || !w.is_multiple_of(STRIDE) || h < MIN_SIDE || w < MIN_SIDE {
        return Err(SodError::InputSize { h, w });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub stem: ConvNormAct,
    pub down: Vec<ConvNormAct>,
    pub res: Vec<ResBlock>,
}

impl Backbone {
    fn new(b: &mut Builder, cfg: &NetConfig) -> Result<Self> {
        let stem = ConvNormAct::new(b, "backbone.stem", 3, cfg.stem, 3, 2, true)?;
        let (mut down, mut res) = (Vec::new(), Vec::new());
        let mut cin = cfg.stem;
        for (s, &c) in cfg.widths.iter().enumerate() {
            down.push(ConvNormAct::new(b, &format!("backbone.stage{s}.down"), cin, c, 3, 2, true)?);
            res.push(ResBlock::new(b, &format!("backbone.stage{s}.res"), c)?);
            cin = c;
        }
        Ok(Backbone { stem, down, res })
    }

    /// Pyramid `[F_1, F_2, F_3, F_4]`, deepest (stride 32) first.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, image: NodeId) -> Result<[NodeId; 4]> {
        let mut x = self.stem.forward(g, image)?;
        let mut levels = Vec::with_capacity(4);
        for (d, r) in self.down.iter().zip(&self.res) {
            x = d.forward(g, x)?;
            x = r.forward(g, x)?;
            levels.push(x);
        }
        levels.reverse();
        ensure_finite(g, levels[0], "backbone")?;
        Ok([levels[0], levels[1], levels[2], levels[3]])
    }
}

/// Lightweight encoder over `concat(image, first-stage map)`; the first
/// decoder's last flow joins at stride 4.
#[derive(Clone, Debug)]
pub struct DetailEncoder {
    pub stem: ConvNormAct,
    pub stages: Vec<ConvNormAct>,
    pub flow_proj: Conv,
}

impl DetailEncoder {
    fn new(b: &mut Builder, name: &str, cfg: &NetConfig) -> Result<Self> {
        let c = cfg.c_flow;
        let stem = ConvNormAct::new(b, &format!("{name}.stem"), 4, cfg.encoder_stem, 3, 2, true)?;
        let stages = (0..4)
            .map(|s| ConvNormAct::new(b, &format!("{name}.stage{s}"), if s == 0 { cfg.encoder_stem } else { c }, c, 3, 2, true))
            .collect::<Result<_>>()?;
        let flow_proj = Conv::new(b, &format!("{name}.flow_proj"), c, c, 1, 1, false)?;
        Ok(DetailEncoder { stem, stages, flow_proj })
    }

    /// Re-encoded features `[D'_1, .., D'_4]`, deepest first.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, image: NodeId, map: NodeId, flow: NodeId) -> Result<[NodeId; 4]> {
        let x = g.concat(&[image, map])?;
        let mut x = self.stem.forward(g, x)?;
        let mut out = Vec::with_capacity(4);
        for (s, stage) in self.stages.iter().enumerate() {
            x = stage.forward(g, x)?;
            if s == 0 {
                let p = self.flow_proj.forward(g, flow)?;
                x = g.add(x, p)?;
            }
            out.push(x);
        }
        out.reverse();
        Ok([out[0], out[1], out[2], out[3]])
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Plain(Plain),
    Mdab(Mdab),
    Mbab(Mbab),
}

/// Chain of three blocks over pyramid levels 2..4, starting from a projection of level 1.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub name: String,
    pub lateral: Vec<ConvNormAct>,
    /// Projection of the deepest re-encoded feature into the initial flow.
    pub extra_init: Option<ConvNormAct>,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Plain,
    Mdab,
    Mbab,
}

impl Decoder {
    fn new(b: &mut Builder, name: &str, cfg: &NetConfig, kind: BlockKind, with_extras: bool) -> Result<Self> {
        let c = cfg.c_flow;
        // widths listed shallow to deep; lateral[i] serves F_{i+1}
        let lateral = (0..4).map(|i| ConvNormAct::new(b, &format!("{name}.lateral{}", i + 1), cfg.widths[3 - i], c, 1, 1, true)).collect::<Result<_>>()?;
        let extra_init = if with_extras { Some(ConvNormAct::new(b, &format!("{name}.extra_init"), c, c, 1, 1, true)?) } else { None };
        let blocks = (2..5)
            .map(|i| {
                let n = format!("{name}.block{i}");
                Ok(match kind {
                    BlockKind::Plain => Block::Plain(Plain::new(b, &n, c)?),
                    BlockKind::Mdab => Block::Mdab(Mdab::new(b, &n, c)?),
                    BlockKind::Mbab => Block::Mbab(Mbab::new(b, &n, c)?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Decoder { name: name.to_string(), lateral, extra_init, blocks })
    }

    /// Final flow at stride 4.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pyramid: &[NodeId; 4], extras: Option<&[NodeId; 4]>, mut trace: Option<&mut Trace>) -> Result<NodeId> {
        let mut flow = self.lateral[0].forward(g, pyramid[0])?;
        if let (Some(p), Some(e)) = (&self.extra_init, extras) {
            let x = p.forward(g, e[0])?;
            flow = g.add(flow, x)?;
        }
        for (k, block) in self.blocks.iter().enumerate() {
            let level = k + 1;
            let feat = self.lateral[level].forward(g, pyramid[level])?;
            let up = resize_like(g, flow, feat)?;
            let name = format!("{}.block{}", self.name, level + 1);
            flow = match block {
                Block::Plain(p) => {
                    let aux: Vec<NodeId> = std::iter::once(feat).chain(extras.map(|e| e[level])).collect();
                    p.forward(g, up, &aux)?
                }
                Block::Mdab(m) => m.forward(g, up, feat, &name, trace.as_deref_mut())?,
                Block::Mbab(m) => {
                    let e = extras.ok_or_else(|| SodError::Config("body attention block needs re-encoded detail features".into()))?;
                    m.forward(g, up, feat, e[level], &name, trace.as_deref_mut())?
                }
            };
            ensure_finite(g, flow, &name)?;
        }
        Ok(flow)
    }
}

/// 3x3 conv to one channel, upsampled to input size, then squashed.
#[derive(Clone, Debug)]
pub struct Head {
    pub conv: Conv,
}

impl Head {
    fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        Ok(Head { conv: Conv::new(b, &format!("{name}.conv"), c, 1, 3, 1, true)? })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, flow: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let logits = self.conv.forward(g, flow)?;
        let up = g.resize(logits, h, w)?;
        Ok(g.sigmoid(up))
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Outputs {
    pub fused: NodeId,
    pub detail: Option<NodeId>,
    pub body: Option<NodeId>,
    /// Local attention maps, filled only in debug mode.
    pub attention: Trace,
}

#[derive(Clone, Debug)]
struct SecondStage {
    encoder: DetailEncoder,
    decoder: Decoder,
    head: Head,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: NetConfig,
    backbone: Backbone,
    first: Decoder,
    first_head: Head,
    second: Option<SecondStage>,
}

impl Model {
    /// Register freshly initialized parameters for `cfg` into `store`.
    pub fn new(cfg: NetConfig, store: &mut ParamStore<f32>, seed: u64) -> Result<Self> {
        let mut b = Builder::new(store, seed);
        let backbone = Backbone::new(&mut b, &cfg)?;
        let arch = cfg.arch;
        let first_kind = if arch.mdab { BlockKind::Mdab } else { BlockKind::Plain };
        let second_kind = if arch.mbab { BlockKind::Mbab } else { BlockKind::Plain };
        let (first_name, second_name) = match arch.cascade {
            Cascade::Direct => ("decoder", None),
            Cascade::DetailFirst => ("detail", Some("body")),
            Cascade::BodyFirst => ("body", Some("detail")),
        };
        let (first, first_head) = if arch.cascade == Cascade::Direct {
            (Decoder::new(&mut b, "decoder", &cfg, BlockKind::Plain, false)?, Head::new(&mut b, "saliency_head", cfg.c_flow)?)
        } else {
            (Decoder::new(&mut b, &format!("{first_name}_decoder"), &cfg, first_kind, false)?, Head::new(&mut b, &format!("{first_name}_head"), cfg.c_flow)?)
        };
        let second = match second_name {
            None => None,
            Some(n) => Some(SecondStage {
                encoder: DetailEncoder::new(&mut b, &format!("{first_name}_encoder"), &cfg)?,
                decoder: Decoder::new(&mut b, &format!("{n}_decoder"), &cfg, second_kind, true)?,
                head: Head::new(&mut b, &format!("{n}_head"), cfg.c_flow)?,
            }),
        };
        Ok(Model { cfg, backbone, first, first_head, second })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn first_decoder(&self) -> &Decoder {
        &self.first
    }

    pub fn second_decoder(&self) -> Option<&Decoder> {
        self.second.as_ref().map(|s| &s.decoder)
    }

    pub fn encoder(&self) -> Option<&DetailEncoder> {
        self.second.as_ref().map(|s| &s.encoder)
    }

    /// Forward a `N x 3 x H x W` image node.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, image: NodeId, debug: bool) -> Result<Outputs> {
        let s = g.shape(image);
        if s.c() != 3 {
            return Err(SodError::Config(format!("expected a 3-channel image, got {s}")));
        }
        let (h, w) = (s.h(), s.w());
        check_input_size(h, w)?;
        let mut trace = Vec::new();
        let pyramid = self.backbone.forward(g, image)?;
        let flow = self.first.forward(g, &pyramid, None, debug.then_some(&mut trace))?;
        let first_map = self.first_head.forward(g, flow, h, w)?;
        ensure_finite(g, first_map, &format!("{}.head", self.first.name))?;
        let Some(second) = &self.second else {
            return Ok(Outputs { fused: first_map, detail: None, body: None, attention: trace });
        };
        let encoded = second.encoder.forward(g, image, first_map, flow)?;
        let flow2 = second.decoder.forward(g, &pyramid, Some(&encoded), debug.then_some(&mut trace))?;
        let second_map = second.head.forward(g, flow2, h, w)?;
        let sum = g.add(first_map, second_map)?;
        let fused = g.clamp(sum, T::zero(), T::one());
        ensure_finite(g, fused, "fusion")?;
        let (detail, body) = match self.cfg.arch.cascade {
            Cascade::BodyFirst => (second_map, first_map),
            _ => (first_map, second_map),
        };
        Ok(Outputs { fused, detail: Some(detail), body: Some(body), attention: trace })
    }

    /// Inference on a batch; returns one set of maps per sample.
    pub fn predict(&self, store: &ParamStore<f32>, images: &Tensor<f32>) -> Result<Vec<SaliencyMaps>> {
        let mut g = Graph::new(store);
        let x = g.input(images.clone());
        let out = self.forward(&mut g, x, false)?;
        Ok(self.collect_maps(&g, &out))
    }

    pub fn collect_maps<T: Scalar>(&self, g: &Graph<T>, out: &Outputs) -> Vec<SaliencyMaps> {
        let n = g.shape(out.fused).n();
        (0..n)
            .map(|i| SaliencyMaps {
                cascade: self.cfg.arch.cascade,
                fused: to_mask(g.value(out.fused), i),
                detail: out.detail.map(|d| to_mask(g.value(d), i)),
                body: out.body.map(|b| to_mask(g.value(b), i)),
            })
            .collect()
    }
}

/// Channel 0 of sample `n` as a map.
pub fn to_mask<T: Scalar>(t: &Tensor<T>, n: usize) -> GrayMask {
    let s = t.shape();
    Grid::from_vec(s.h(), s.w(), t.plane(n, 0).iter().map(|v| v.f64()).collect()).expect("non-empty plane")
}

/// Stack per-sample maps into an `N x 1 x H x W` tensor.
pub fn from_masks<T: Scalar>(maps: &[&GrayMask]) -> Tensor<T> {
    let (h, w) = maps[0].dims();
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        data.extend(m.data().iter().map(|&v| T::of(v)));
    }
    Tensor::from_vec(Shape([maps.len(), 1, h, w]), data).expect("consistent map sizes")
}
