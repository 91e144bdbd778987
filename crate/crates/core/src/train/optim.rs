//! SGD with momentum and L2 weight decay.

use sodnet_tensor::{ParamGrads, ParamStore, Tensor};

use crate::error::{Result, SodError};

/// `v = mu v + (g + wd p)`, `p -= lr v`, per parameter group.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: Vec<Tensor<f32>>,
}

impl Sgd {
    pub fn new(store: &ParamStore<f32>, momentum: f64, weight_decay: f64) -> Self {
        let buffers = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Sgd { momentum, weight_decay, buffers }
    }

    /// `lr_for(name)` picks the learning rate of each parameter's group.
    /// Gradients are multiplied by `grad_scale` before weight decay is added.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &ParamGrads<f32>, grad_scale: f64, lr_for: impl Fn(&str) -> f64) -> Result<()> {
        if self.buffers.len() != store.len() {
            return Err(SodError::Checkpoint(format!("{} momentum buffers for {} parameters", self.buffers.len(), store.len())));
        }
        let (mu, wd, scale) = (self.momentum as f32, self.weight_decay as f32, grad_scale as f32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let lr = lr_for(&store.get(id).name) as f32;
            let buf = &mut self.buffers[id.index()];
            let p = store.value_mut(id);
            let g = grads.get(id);
            for (i, (v, w)) in buf.data_mut().iter_mut().zip(p.data_mut()).enumerate() {
                let gi = scale * g.map_or(0.0, |g| g.data()[i]) + wd * *w;
                *v = mu * *v + gi;
                *w -= lr * *v;
            }
        }
        Ok(())
    }
}

/// Parameters under `backbone.` train at the backbone rate, all others at the head rate.
pub fn is_backbone(name: &str) -> bool {
    name.starts_with("backbone.")
}
