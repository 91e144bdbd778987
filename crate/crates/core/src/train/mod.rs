//! Training loop: batching, augmentation, loss/gradient evaluation and SGD.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod schedule;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sodnet_tensor::{Gradients, Graph, ParamStore, Scalar, Tensor};

use crate::data::{augment, jitter_size, stack_images, AugmentDraw, Dataset, Sample};
use crate::error::{Result, SodError};
use crate::grid::GrayMask;
use crate::imageio::resize_gray;
use crate::losses::{hybrid_loss, LossConfig, LossReport, SaliencyMaps};
use crate::metrics::mae;
use crate::net::{from_masks, Model};
use checkpoint::Checkpoint;
use config::TrainConfig;
use optim::{is_backbone, Sgd};
use schedule::lr_schedule;

/// Stream offset separating augmentation draws from epoch shuffles.
const AUGMENT_STREAM: u64 = 1 << 32;

/// Forward, hybrid loss and backward for one batch.
pub fn loss_and_grads<T: Scalar>(model: &Model, store: &ParamStore<T>, images: Tensor<T>, batch: &[&Sample], cfg: &LossConfig) -> Result<(LossReport, Gradients<T>)> {
    let mut g = Graph::new(store);
    let x = g.input(images);
    let out = model.forward(&mut g, x, false)?;
    let maps = model.collect_maps(&g, &out);
    let n = batch.len() as f64;
    let mut reports = Vec::with_capacity(batch.len());
    let (mut dfused, mut ddetail, mut dbody) = (Vec::new(), Vec::new(), Vec::new());
    for (m, s) in maps.iter().zip(batch) {
        let (r, grads) = hybrid_loss(m, &s.gt, &s.detail, cfg)?;
        reports.push(r);
        let scale = |g: GrayMask| g.map(|v| v / n);
        dfused.push(scale(grads.fused));
        ddetail.extend(grads.detail.map(scale));
        dbody.extend(grads.body.map(scale));
    }
    let stack = |v: &[GrayMask]| from_masks::<T>(&v.iter().collect::<Vec<_>>());
    let mut seeds = vec![(out.fused, stack(&dfused))];
    if let Some(d) = out.detail {
        seeds.push((d, stack(&ddetail)));
    }
    if let Some(b) = out.body {
        seeds.push((b, stack(&dbody)));
    }
    let grads = g.backward(seeds)?;
    Ok((LossReport::mean(&reports), grads))
}

/// One line of the per-step training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub input_size: usize,
    pub batch: Vec<String>,
    #[serde(default)]
    pub grad_norm: f64,
    pub loss: LossReport,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub store: ParamStore<f32>,
    pub opt: Sgd,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub best_val_mae: Option<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let model = Model::new(cfg.net_config(), &mut store, cfg.seed)?;
        let opt = Sgd::new(&store, cfg.momentum, cfg.weight_decay);
        Ok(Trainer { cfg, model, store, opt, step: 0, best_val_mae: None })
    }

    /// Rebuild the exact training state stored in `ckpt`.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(ckpt.header.config.clone())?;
        ckpt.restore_into(&mut t.store)?;
        if ckpt.momentum.len() == t.store.len() {
            t.opt.buffers = ckpt.momentum.clone();
        }
        t.step = ckpt.header.step;
        t.best_val_mae = ckpt.header.best_val_mae;
        Ok(t)
    }

    pub fn checkpoint(&self, n_train: usize) -> Checkpoint {
        let epoch = self.step / self.steps_per_epoch(n_train).max(1);
        Checkpoint::new(self.cfg.clone(), epoch, self.step, self.best_val_mae, self.store.clone(), self.opt.buffers.clone())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.cfg.epochs * self.steps_per_epoch(n)
    }

    /// Sample order for `epoch`, a pure function of `(seed, epoch)`.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(self.cfg.seed, epoch as u64));
        order
    }

    /// The augmented batch used at global step `step`.
    pub fn batch_at(&self, ds: &Dataset, step: usize) -> Result<Vec<Sample>> {
        let n = ds.len();
        if n == 0 {
            return Err(SodError::Empty("training set".into()));
        }
        let spe = self.steps_per_epoch(n);
        let (epoch, k) = (step / spe, step % spe);
        let order = self.epoch_order(epoch, n);
        let idx = &order[k * self.cfg.batch_size..((k + 1) * self.cfg.batch_size).min(n)];
        let mut rng = stream_rng(self.cfg.seed, AUGMENT_STREAM + step as u64);
        let base = self.cfg.input_size;
        let aug = &self.cfg.augmentation;
        let size = if self.cfg.augment && !aug.scales.is_empty() { jitter_size(base, aug.scales[rng.random_range(0..aug.scales.len())]) } else { base };
        idx.iter()
            .map(|&i| {
                let s = &ds.samples[i];
                let (h, w) = s.gt.dims();
                let draw = if self.cfg.augment { AugmentDraw::sample(&mut rng, h, w, aug) } else { AugmentDraw::identity(h, w) };
                augment(s, &draw, (size, size))
            })
            .collect()
    }

    /// Run optimizer step `self.step` on `ds`.
    pub fn train_step(&mut self, ds: &Dataset) -> Result<StepRecord> {
        let total = self.total_steps(ds.len());
        let step = self.step;
        let batch = self.batch_at(ds, step)?;
        let refs: Vec<&Sample> = batch.iter().collect();
        let images = stack_images(&refs)?;
        let input_size = images.shape().h();
        let ids: Vec<String> = batch.iter().map(|s| s.id.clone()).collect();
        let (report, grads) = match loss_and_grads(&self.model, &self.store, images, &refs, &self.cfg.loss_config()) {
            Err(SodError::NonFinite { block }) => {
                log::error!("non-finite activations after {block} at step {step}");
                return Err(SodError::NonFiniteLoss { step, batch_id: ids.join(",") });
            }
            r => r?,
        };
        if !report.is_finite() || !grads.params.all_finite() {
            return Err(SodError::NonFiniteLoss { step, batch_id: ids.join(",") });
        }
        let grad_norm = grads.params.global_norm();
        let (lb, lh) = lr_schedule(step, total, self.cfg.warmup_fraction, self.cfg.lr_backbone, self.cfg.lr_head);
        let max = self.cfg.max_grad_norm;
        let grad_scale = if max > 0.0 && grad_norm > max { max / grad_norm } else { 1.0 };
        self.opt.step(&mut self.store, &grads.params, grad_scale, |name| if is_backbone(name) { lb } else { lh })?;
        self.step += 1;
        Ok(StepRecord { step, epoch: step / self.steps_per_epoch(ds.len()), lr_backbone: lb, lr_head: lh, input_size, batch: ids, grad_norm, loss: report })
    }

    /// Train until the configured number of epochs; callbacks see every step and every finished epoch.
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        mut on_step: impl FnMut(&StepRecord) -> Result<()>,
        mut on_epoch: impl FnMut(&Trainer, usize) -> Result<()>,
    ) -> Result<()> {
        let spe = self.steps_per_epoch(train.len());
        while self.step < self.total_steps(train.len()) {
            let rec = self.train_step(train)?;
            on_step(&rec)?;
            if self.step.is_multiple_of(spe) {
                let epoch = self.step / spe;
                if let Some(v) = val.filter(|v| !v.is_empty()) {
                    let m = self.validate(v)?;
                    self.best_val_mae = Some(self.best_val_mae.map_or(m, |b| b.min(m)));
                }
                on_epoch(self, epoch)?;
            }
        }
        Ok(())
    }

    /// Mean MAE on `ds` at the configured input size.
    pub fn validate(&self, ds: &Dataset) -> Result<f64> {
        let preds = predict_dataset(&self.model, &self.store, ds, self.cfg.input_size, self.cfg.batch_size)?;
        let mut total = 0.0;
        for (p, s) in preds.iter().zip(&ds.samples) {
            total += mae(&p.fused, &s.gt)?;
        }
        Ok(total / ds.len() as f64)
    }
}

/// Predict every sample at `size x size`, returning maps at each sample's own resolution.
pub fn predict_dataset(model: &Model, store: &ParamStore<f32>, ds: &Dataset, size: usize, batch: usize) -> Result<Vec<SaliencyMaps>> {
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.samples.chunks(batch.max(1)) {
        let resized: Vec<Sample> = chunk
            .iter()
            .map(|s| Sample { image: s.image.resize(size, size), ..s.clone() })
            .collect();
        let refs: Vec<&Sample> = resized.iter().collect();
        let maps = model.predict(store, &stack_images(&refs)?)?;
        for (m, s) in maps.into_iter().zip(chunk) {
            let (h, w) = s.gt.dims();
            let r = |g: &GrayMask| resize_gray(g, h, w);
            let detail = m.detail.as_ref().map(r);
            let body = m.body.as_ref().map(r);
            // Fuse after resizing so the clamp identity holds at output resolution.
            let fused = match (&detail, &body) {
                (Some(d), Some(b)) => fuse(d, b),
                _ => r(&m.fused),
            };
            out.push(SaliencyMaps { cascade: m.cascade, fused, detail, body });
        }
    }
    Ok(out)
}

/// `clamp(detail + body, 0, 1)` pixelwise.
pub fn fuse(detail: &GrayMask, body: &GrayMask) -> GrayMask {
    let mut out = detail.clone();
    for (o, &b) in out.data_mut().iter_mut().zip(body.data()) {
        *o = (*o + b).clamp(0.0, 1.0);
    }
    out
}
