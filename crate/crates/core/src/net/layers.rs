//! Parameterized building blocks: convolutions, group-normalized conv units and
//! residual blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sodnet_tensor::{Graph, NodeId, ParamId, ParamStore, Scalar, Shape, Tensor};

use crate::error::{Result, SodError};

/// Registers freshly initialized parameters under hierarchical names.
pub struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        Builder { store, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Kaiming (fan-in) normal weights of shape `cout x cin x k x k`.
    pub fn kaiming(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> Result<ParamId> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let shape = Shape([cout, cin, k, k]);
        let data = (0..shape.numel()).map(|_| normal.sample(&mut self.rng) as f32).collect();
        Ok(self.store.register(name, Tensor::from_vec(shape, data)?)?)
    }

    pub fn constant(&mut self, name: &str, c: usize, v: f32) -> Result<ParamId> {
        Ok(self.store.register(name, Tensor::full(Shape([1, c, 1, 1]), v))?)
    }
}

/// 2-D convolution with "same" padding for odd kernels.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub k: usize,
}

impl Conv {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Result<Self> {
        let weight = b.kaiming(&format!("{name}.weight"), cout, cin, k)?;
        let bias = if bias { Some(b.constant(&format!("{name}.bias"), cout, 0.0)?) } else { None };
        Ok(Conv { weight, bias, stride, k })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        Ok(g.conv2d(x, w, b, self.stride, self.k / 2)?)
    }
}

pub fn groups_for(c: usize) -> usize {
    (1..=8).rev().find(|g| c.is_multiple_of(*g)).unwrap_or(1)
}

/// Conv (no bias) -> GroupNorm -> optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub act: bool,
}

impl ConvNormAct {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize, stride: usize, act: bool) -> Result<Self> {
        Ok(ConvNormAct {
            conv: Conv::new(b, &format!("{name}.conv"), cin, cout, k, stride, false)?,
            gamma: b.constant(&format!("{name}.norm.gamma"), cout, 1.0)?,
            beta: b.constant(&format!("{name}.norm.beta"), cout, 0.0)?,
            groups: groups_for(cout),
            act,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let y = self.conv.forward(g, x)?;
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        let y = g.group_norm(y, gamma, beta, self.groups)?;
        Ok(if self.act { g.relu(y) } else { y })
    }
}

/// `relu(x + f(x))` with two 3x3 conv units.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub a: ConvNormAct,
    pub b: ConvNormAct,
}

impl ResBlock {
    pub fn new(bd: &mut Builder, name: &str, c: usize) -> Result<Self> {
        Ok(ResBlock {
            a: ConvNormAct::new(bd, &format!("{name}.a"), c, c, 3, 1, true)?,
            b: ConvNormAct::new(bd, &format!("{name}.b"), c, c, 3, 1, false)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let y = self.a.forward(g, x)?;
        let y = self.b.forward(g, y)?;
        let s = g.add(x, y)?;
        Ok(g.relu(s))
    }
}

/// Fail fast if a block produced NaN or infinity.
pub fn ensure_finite<T: Scalar>(g: &Graph<T>, x: NodeId, block: &str) -> Result<()> {
    if g.value(x).is_finite() {
        Ok(())
    } else {
        Err(SodError::NonFinite { block: block.to_string() })
    }
}

/// Bilinear resize of `x` to the spatial size of `like`.
pub fn resize_like<T: Scalar>(g: &mut Graph<T>, x: NodeId, like: NodeId) -> Result<NodeId> {
    let s = g.shape(like);
    Ok(g.resize(x, s.h(), s.w())?)
}
