//! Attention units and the multi-scale decoder blocks built from them.

use sodnet_tensor::{Graph, NodeId, Scalar};

use super::layers::{Builder, Conv, ConvNormAct};
use crate::error::{Result, SodError};

pub const SCALES: usize = 3;

/// Spatial size of pooling scale `t` (0 = identity, then halving, rounding up).
pub fn scale_size(h: usize, w: usize, t: usize) -> (usize, usize) {
    (h.div_ceil(1 << t), w.div_ceil(1 << t))
}

/// Representation sampler: `relu(sum_k P_k(x_k))`, one 1x1 projection per stream.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub projections: Vec<Conv>,
}

impl Sampler {
    pub fn new(b: &mut Builder, name: &str, streams: usize, c: usize) -> Result<Self> {
        let projections = (0..streams).map(|k| Conv::new(b, &format!("{name}.proj{k}"), c, c, 1, 1, k == 0)).collect::<Result<_>>()?;
        Ok(Sampler { projections })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, streams: &[NodeId]) -> Result<NodeId> {
        if streams.len() != self.projections.len() {
            return Err(SodError::Config(format!("sampler expects {} streams, got {}", self.projections.len(), streams.len())));
        }
        let first = g.shape(streams[0]);
        for &s in streams {
            let sh = g.shape(s);
            if (sh.h(), sh.w()) != (first.h(), first.w()) {
                return Err(SodError::ShapeMismatch { op: "attention_unit", a: (first.h(), first.w()), b: (sh.h(), sh.w()) });
            }
        }
        let projected = self.projections.iter().zip(streams).map(|(p, &s)| p.forward(g, s)).collect::<Result<Vec<_>>>()?;
        let s = g.sum(&projected)?;
        Ok(g.relu(s))
    }
}

/// Local (1-channel spatial) and global (per-channel) gates, both in `(0, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionPair {
    pub local: NodeId,
    pub global: NodeId,
}

#[derive(Clone, Debug)]
pub struct Gates {
    pub local: Conv,
    pub global: Conv,
}

impl Gates {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        Ok(Gates {
            local: Conv::new(b, &format!("{name}.local"), c, 1, 3, 1, true)?,
            global: Conv::new(b, &format!("{name}.global"), c, c, 1, 1, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, r: NodeId) -> Result<AttentionPair> {
        let l = self.local.forward(g, r)?;
        let local = g.sigmoid(l);
        let pooled = g.global_avg_pool(r)?;
        let gl = self.global.forward(g, pooled)?;
        let global = g.sigmoid(gl);
        Ok(AttentionPair { local, global })
    }
}

/// Sampler followed by gates: the full attention unit.
pub fn attention_unit<T: Scalar>(g: &mut Graph<T>, sampler: &Sampler, gates: &Gates, streams: &[NodeId]) -> Result<AttentionPair> {
    let r = sampler.forward(g, streams)?;
    gates.forward(g, r)
}

fn pool_to<T: Scalar>(g: &mut Graph<T>, x: NodeId, size: (usize, usize)) -> Result<NodeId> {
    let s = g.shape(x);
    if (s.h(), s.w()) == size {
        return Ok(x);
    }
    Ok(g.avg_pool(x, size.0, size.1)?)
}

/// `x * (local + global)`, upsampled back to `h x w`.
fn attend<T: Scalar>(g: &mut Graph<T>, x: NodeId, pair: AttentionPair, h: usize, w: usize) -> Result<NodeId> {
    let att = g.add(pair.local, pair.global)?;
    let y = g.mul(x, att)?;
    Ok(g.resize(y, h, w)?)
}

/// Local attention maps collected in debug mode, keyed by block and scale.
pub type Trace = Vec<(String, NodeId)>;

/// Multi-scale detail attention block.
#[derive(Clone, Debug)]
pub struct Mdab {
    pub sampler: Sampler,
    pub gates: Vec<Gates>,
    pub out: ConvNormAct,
}

impl Mdab {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        Ok(Mdab {
            sampler: Sampler::new(b, &format!("{name}.sampler"), 2, c)?,
            gates: (0..SCALES).map(|t| Gates::new(b, &format!("{name}.unit{t}"), c)).collect::<Result<_>>()?,
            out: ConvNormAct::new(b, &format!("{name}.out"), c, c, 3, 1, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, flow: NodeId, feat: NodeId, name: &str, trace: Option<&mut Trace>) -> Result<NodeId> {
        let s = g.shape(feat);
        let (h, w) = (s.h(), s.w());
        let mut terms = vec![flow];
        let mut maps = Vec::new();
        for (t, gates) in self.gates.iter().enumerate() {
            let size = scale_size(h, w, t);
            let fp = pool_to(g, flow, size)?;
            let xp = pool_to(g, feat, size)?;
            let pair = attention_unit(g, &self.sampler, gates, &[fp, xp])?;
            maps.push((format!("{name}.scale{t}"), pair.local));
            terms.push(attend(g, xp, pair, h, w)?);
        }
        if let Some(tr) = trace {
            tr.extend(maps);
        }
        let s = g.sum(&terms)?;
        self.out.forward(g, s)
    }
}

/// Multi-scale body attention block: feature-stream and detail-stream units,
/// each family with its own shared sampler.
#[derive(Clone, Debug)]
pub struct Mbab {
    pub feature_sampler: Sampler,
    pub detail_sampler: Sampler,
    pub feature_gates: Vec<Gates>,
    pub detail_gates: Vec<Gates>,
    pub out: ConvNormAct,
}

impl Mbab {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        Ok(Mbab {
            feature_sampler: Sampler::new(b, &format!("{name}.feature_sampler"), 3, c)?,
            detail_sampler: Sampler::new(b, &format!("{name}.detail_sampler"), 3, c)?,
            feature_gates: (0..SCALES).map(|t| Gates::new(b, &format!("{name}.feature_unit{t}"), c)).collect::<Result<_>>()?,
            detail_gates: (0..SCALES).map(|t| Gates::new(b, &format!("{name}.detail_unit{t}"), c)).collect::<Result<_>>()?,
            out: ConvNormAct::new(b, &format!("{name}.out"), c, c, 3, 1, true)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        flow: NodeId,
        feat: NodeId,
        detail: NodeId,
        name: &str,
        trace: Option<&mut Trace>,
    ) -> Result<NodeId> {
        let s = g.shape(feat);
        let (h, w) = (s.h(), s.w());
        let mut terms = vec![flow];
        let mut maps = Vec::new();
        for t in 0..SCALES {
            let size = scale_size(h, w, t);
            let bp = pool_to(g, flow, size)?;
            let fp = pool_to(g, feat, size)?;
            let dp = pool_to(g, detail, size)?;
            let fa = attention_unit(g, &self.feature_sampler, &self.feature_gates[t], &[bp, fp, dp])?;
            let da = attention_unit(g, &self.detail_sampler, &self.detail_gates[t], &[bp, fp, dp])?;
            maps.push((format!("{name}.feature.scale{t}"), fa.local));
            maps.push((format!("{name}.detail.scale{t}"), da.local));
            terms.push(attend(g, fp, fa, h, w)?);
            terms.push(attend(g, dp, da, h, w)?);
        }
        if let Some(tr) = trace {
            tr.extend(maps);
        }
        let s = g.sum(&terms)?;
        self.out.forward(g, s)
    }
}

/// Attention-free decoder block: `conv(flow + sum(aux))`.
#[derive(Clone, Debug)]
pub struct Plain {
    pub out: ConvNormAct,
}

impl Plain {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        Ok(Plain { out: ConvNormAct::new(b, &format!("{name}.out"), c, c, 3, 1, true)? })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, flow: NodeId, aux: &[NodeId]) -> Result<NodeId> {
        let mut terms = vec![flow];
        terms.extend_from_slice(aux);
        let s = g.sum(&terms)?;
        self.out.forward(g, s)
    }
}
