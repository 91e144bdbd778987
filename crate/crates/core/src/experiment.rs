//! Train-then-evaluate runs, their `run.json` records and ablation tables.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SodError};
use crate::metrics::{evaluate, MetricReport, PrAggregation};
use crate::preset::Preset;
use crate::train::config::{content_hash, TrainConfig};
use crate::train::{predict_dataset, Trainer};

/// Contents of `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub config_hash: String,
    /// Content hash of the final checkpoint bytes.
    pub checkpoint_hash: String,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock figures; excluded from reproducibility comparisons.
    pub timing: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| SodError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SodError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn metric_map(r: &MetricReport) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("mae".to_string(), r.mae),
        ("mean_f".to_string(), r.mean_f),
        ("max_f".to_string(), r.max_f),
        ("weighted_f".to_string(), r.weighted_f),
        ("n_images".to_string(), r.n_images as f64),
    ])
}

/// Evaluate the fused maps of a trained model on `test`.
pub fn evaluate_model(trainer: &Trainer, test: &Dataset) -> Result<MetricReport> {
    let preds = predict_dataset(&trainer.model, &trainer.store, test, trainer.cfg.input_size, trainer.cfg.batch_size)?;
    let fused: Vec<_> = preds.into_iter().map(|m| m.fused).collect();
    let gts: Vec<_> = test.samples.iter().map(|s| s.gt.clone()).collect();
    evaluate(&fused, &gts, PrAggregation::PerImage)
}

pub struct RunOutput {
    pub trainer: Trainer,
    pub record: RunRecord,
    pub report: Option<MetricReport>,
}

/// Train `trainer` to completion, evaluate on `test`, and (with `out_dir`) write
/// `train_log.jsonl`, periodic and final checkpoints and `run.json`.
pub fn run(mut trainer: Trainer, train: &Dataset, val: Option<&Dataset>, test: Option<&Dataset>, out_dir: Option<&Path>) -> Result<RunOutput> {
    if train.is_empty() {
        return Err(SodError::Empty("training set".into()));
    }
    let start = Instant::now();
    let mut log = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| SodError::io(d, e))?;
            let p = d.join("train_log.jsonl");
            let f = std::fs::OpenOptions::new().create(true).append(true).open(&p).map_err(|e| SodError::io(&p, e))?;
            Some((p, BufWriter::new(f)))
        }
        None => None,
    };
    let mut final_loss = None;
    let every = trainer.cfg.checkpoint_every;
    let n = train.len();
    trainer.fit(
        train,
        val,
        |rec| {
            final_loss = Some(rec.loss.l_total);
            if let Some((p, w)) = log.as_mut() {
                serde_json::to_writer(&mut *w, rec)?;
                w.write_all(b"\n").map_err(|e| SodError::io(p.as_path(), e))?;
            }
            log::debug!("step {} loss {:.4}", rec.step, rec.loss.l_total);
            Ok(())
        },
        |t, epoch| {
            log::info!("epoch {epoch} done (step {})", t.step);
            if let (Some(d), true) = (out_dir, every > 0 && epoch % every.max(1) == 0) {
                t.checkpoint(n).save(&d.join(format!("epoch{epoch:03}.ckpt")))?;
            }
            Ok(())
        },
    )?;
    if let Some((p, mut w)) = log {
        w.flush().map_err(|e| SodError::io(&p, e))?;
    }
    let train_seconds = start.elapsed().as_secs_f64();
    let ckpt = trainer.checkpoint(n);
    let bytes = ckpt.to_bytes();
    if let Some(d) = out_dir {
        let p = d.join("final.ckpt");
        std::fs::write(&p, &bytes).map_err(|e| SodError::io(&p, e))?;
    }
    let report = test.map(|t| evaluate_model(&trainer, t)).transpose()?;
    let record = RunRecord {
        command: "train".into(),
        config: trainer.cfg.clone(),
        seed: trainer.cfg.seed,
        config_hash: trainer.cfg.hash(),
        checkpoint_hash: content_hash("checkpoint", &bytes),
        steps: trainer.step,
        final_loss,
        metrics: report.as_ref().map(metric_map).unwrap_or_default(),
        timing: BTreeMap::from([("train_seconds".to_string(), train_seconds), ("total_seconds".to_string(), start.elapsed().as_secs_f64())]),
    };
    if let Some(d) = out_dir {
        record.save(&d.join("run.json"))?;
        if let Some(r) = &report {
            std::fs::write(d.join("curves.csv"), r.sweep.to_csv()).map_err(|e| SodError::io(d.join("curves.csv"), e))?;
        }
    }
    Ok(RunOutput { trainer, record, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: Preset,
    pub description: String,
    pub mae: f64,
    pub mean_f: f64,
    pub weighted_f: f64,
    pub params: usize,
}

/// Train and evaluate each preset with otherwise identical settings.
pub fn ablate(base: &TrainConfig, presets: &[Preset], train: &Dataset, test: &Dataset, out_dir: Option<&Path>) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &p in presets {
        let cfg = TrainConfig { preset: p, ..base.clone() };
        let trainer = Trainer::new(cfg)?;
        let params = trainer.store.num_scalars();
        let dir = out_dir.map(|d| d.join(p.to_string()));
        let out = run(trainer, train, None, Some(test), dir.as_deref())?;
        let r = out.report.expect("test set given");
        log::info!("{p}: mae {:.4} mean_f {:.4} weighted_f {:.4}", r.mae, r.mean_f, r.weighted_f);
        rows.push(AblationRow { preset: p, description: p.describe().to_string(), mae: r.mae, mean_f: r.mean_f, weighted_f: r.weighted_f, params });
    }
    if let Some(d) = out_dir {
        let csv = ablation_csv(&rows);
        std::fs::write(d.join("ablation.csv"), csv).map_err(|e| SodError::io(d.join("ablation.csv"), e))?;
        std::fs::write(d.join("ablation.md"), ablation_markdown(&rows)).map_err(|e| SodError::io(d.join("ablation.md"), e))?;
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("preset,description,mae,mean_f,weighted_f,params\n");
    for r in rows {
        s.push_str(&format!("{},\"{}\",{:.4},{:.4},{:.4},{}\n", r.preset, r.description, r.mae, r.mean_f, r.weighted_f, r.params));
    }
    s
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from("| Preset | Configuration | MAE | mean F | weighted F | Params |\n|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!("| {} | {} | {:.4} | {:.4} | {:.4} | {} |\n", r.preset, r.description, r.mae, r.mean_f, r.weighted_f, r.params));
    }
    s
}
