//! Inference over a directory of images with optional map and attention dumps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sodnet_tensor::{Graph, ParamStore};

use crate::error::{Result, SodError};
use crate::imageio::{list_images, read_rgb, resize_gray, write_gray};
use crate::net::{to_mask, Model};
use crate::train::checkpoint::Checkpoint;
use crate::train::fuse;

#[derive(Clone, Debug, Default)]
pub struct InferOptions {
    pub dump_detail: bool,
    pub dump_body: bool,
    pub dump_attention: bool,
    /// Hash of the config the caller expects the checkpoint to carry.
    pub expected_config_hash: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InferSummary {
    pub images: usize,
    pub seconds: f64,
    pub images_per_sec: f64,
    pub config_hash: String,
    pub outputs: Vec<PathBuf>,
}

/// Rebuild the model described by a checkpoint and load its parameters.
pub fn load_model(ckpt: &Checkpoint, expected_hash: Option<&str>) -> Result<(Model, ParamStore<f32>)> {
    let found = ckpt.header.config_hash.clone();
    let actual = ckpt.header.config.hash();
    if actual != found {
        return Err(SodError::ConfigMismatch { expected: actual, found });
    }
    if let Some(expected) = expected_hash {
        if expected != found {
            return Err(SodError::ConfigMismatch { expected: expected.to_string(), found });
        }
    }
    let mut store = ParamStore::new();
    let model = Model::new(ckpt.header.config.net_config(), &mut store, 0)?;
    ckpt.restore_into(&mut store)?;
    Ok((model, store))
}

/// Predict every image in `image_dir`, writing 8-bit maps at the original resolution.
///
/// Files: `<stem>.png` (fused), optionally `<stem>_detail.png`, `<stem>_body.png`
/// and `attention/<stem>/<block>.png`.
pub fn infer_dir(ckpt: &Checkpoint, image_dir: &Path, out_dir: &Path, opts: &InferOptions) -> Result<InferSummary> {
    let (model, store) = load_model(ckpt, opts.expected_config_hash.as_deref())?;
    let size = ckpt.header.config.input_size;
    let files = list_images(image_dir)?;
    if files.is_empty() {
        return Err(SodError::Empty(format!("no images in {}", image_dir.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| SodError::io(out_dir, e))?;
    let start = Instant::now();
    let mut outputs = Vec::new();
    for (stem, path) in &files {
        let image = read_rgb(path)?;
        let (h, w) = image.dims();
        let mut g = Graph::new(&store);
        let x = g.input(image.resize(size, size).to_tensor());
        let out = model.forward(&mut g, x, opts.dump_attention)?;
        let back = |id| resize_gray(&to_mask(g.value(id), 0), h, w);
        let detail = out.detail.map(back);
        let body = out.body.map(back);
        let fused = match (&detail, &body) {
            (Some(d), Some(b)) => fuse(d, b),
            _ => back(out.fused),
        };
        let mut write = |name: String, m: &crate::grid::GrayMask| -> Result<()> {
            let p = out_dir.join(name);
            write_gray(&p, m)?;
            outputs.push(p);
            Ok(())
        };
        write(format!("{stem}.png"), &fused)?;
        if let (true, Some(d)) = (opts.dump_detail, &detail) {
            write(format!("{stem}_detail.png"), d)?;
        }
        if let (true, Some(b)) = (opts.dump_body, &body) {
            write(format!("{stem}_body.png"), b)?;
        }
        for (name, id) in &out.attention {
            write(format!("attention/{stem}/{name}.png"), &to_mask(g.value(*id), 0))?;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(InferSummary {
        images: files.len(),
        seconds,
        images_per_sec: files.len() as f64 / seconds.max(1e-9),
        config_hash: ckpt.header.config_hash.clone(),
        outputs,
    })
}
