use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sodnet::data::{generate_synthetic, load_folder, Dataset, SynthSpec};
use sodnet::experiment::{ablate, run, RunRecord};
use sodnet::imageio::{list_images, read_mask, write_gray};
use sodnet::infer::{infer_dir, InferOptions};
use sodnet::labelgen::{decompose_body, decompose_detail};
use sodnet::metrics::{evaluate_dirs, PrAggregation, PrSweep};
use sodnet::plot::{f_curve_svg, pr_curve_svg};
use sodnet::train::checkpoint::Checkpoint;
use sodnet::train::config::TrainConfig;
use sodnet::train::Trainer;
use sodnet::Preset;

#[derive(Parser, Debug)]
#[command(name = "sodnet", version, about = "Cascaded detail/body salient object detection")]
struct Cli {
    /// Worker threads for data generation and evaluation (1 = single-threaded).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus (images/, masks/, spec.json).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Index of the first image; use disjoint ranges for held-out sets.
        #[arg(long, default_value_t = 0)]
        first_index: usize,
    },
    /// Turn binary masks into detail (and optionally body) labels.
    Decompose {
        #[arg(long)]
        masks: PathBuf,
        /// Defaults to a `detail` directory next to `--masks`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write body labels to a sibling `body` directory.
        #[arg(long)]
        body: bool,
    },
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory with images/ and masks/.
        #[arg(long)]
        data: PathBuf,
        /// Optional held-out directory evaluated after training.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint; its config wins over file and flags.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra maps to write: any of `detail`, `body`.
        #[arg(long, value_delimiter = ',')]
        dump: Vec<String>,
        #[arg(long)]
        dump_attention: bool,
        /// Config the checkpoint must have been trained with.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        curves: Option<PathBuf>,
        /// Pool counts over the dataset instead of averaging per-image P/R.
        #[arg(long)]
        pooled: bool,
    },
    /// Render PR and F-vs-threshold SVGs from curve CSV files.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        curves: Vec<PathBuf>,
        /// Legend labels, defaulting to file stems.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate several presets with identical settings.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "B1,B2,B3,B4,B5,B6,B7")]
        presets: Vec<Preset>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile when no config file is given: `desk` or `paper`.
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    lr_head: Option<f64>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_augment: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => TrainConfig::profile(&self.profile)?,
        };
        if let Some(v) = self.preset {
            cfg.preset = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr_backbone {
            cfg.lr_backbone = v;
        }
        if let Some(v) = self.lr_head {
            cfg.lr_head = v;
        }
        if let Some(v) = self.input_size {
            cfg.input_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.no_augment {
            cfg.augment = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_dir(root: &Path) -> Result<Dataset> {
    let load = load_folder(&root.join("images"), &root.join("masks"), None).with_context(|| format!("loading dataset {}", root.display()))?;
    if !load.unmatched.is_empty() {
        log::warn!("{} images without masks in {}", load.unmatched.len(), root.display());
    }
    for (id, why) in &load.skipped {
        log::warn!("skipped {id}: {why}");
    }
    Ok(load.dataset)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Generate { out, n, size, seed, first_index } => {
            let spec = SynthSpec { n_images: n, height: size, width: size, seed, first_index, ..SynthSpec::default() };
            let ds = generate_synthetic(&spec, &out)?;
            println!("wrote {} images to {}", ds.len(), out.display());
        }
        Command::Decompose { masks, out, body } => {
            let parent = masks.parent().map(Path::to_path_buf).unwrap_or_default();
            let detail_dir = out.unwrap_or_else(|| parent.join("detail"));
            let files = list_images(&masks)?;
            if files.is_empty() {
                bail!("no masks in {}", masks.display());
            }
            for (stem, path) in &files {
                let gt = read_mask(path)?;
                let detail = decompose_detail(&gt);
                write_gray(&detail_dir.join(format!("{stem}.png")), detail.map())?;
                if body {
                    let b = decompose_body(&gt, &detail)?;
                    write_gray(&parent.join("body").join(format!("{stem}.png")), &b)?;
                }
            }
            println!("decomposed {} masks into {}", files.len(), detail_dir.display());
        }
        Command::Train { cfg, data, test, out, resume } => {
            let trainer = match &resume {
                Some(p) => Trainer::from_checkpoint(&Checkpoint::load(p)?)?,
                None => Trainer::new(cfg.resolve()?)?,
            };
            let (train, val) = load_dir(&data)?.split_tail(trainer.cfg.val_size);
            let test = test.as_deref().map(load_dir).transpose()?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.toml"), trainer.cfg.to_toml())?;
            log::info!("training {} on {} images ({} validation), config {}", trainer.cfg.preset, train.len(), val.len(), trainer.cfg.hash());
            let res = run(trainer, &train, Some(&val), test.as_ref(), Some(&out))?;
            print_record(&res.record);
        }
        Command::Infer { checkpoint, images, out, dump, dump_attention, config } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut opts = InferOptions { dump_attention, ..InferOptions::default() };
            for d in &dump {
                match d.as_str() {
                    "detail" => opts.dump_detail = true,
                    "body" => opts.dump_body = true,
                    other => bail!("unknown dump target {other:?} (expected detail or body)"),
                }
            }
            if let Some(p) = config {
                opts.expected_config_hash = Some(TrainConfig::load(&p)?.hash());
            }
            let summary = infer_dir(&ckpt, &images, &out, &opts)?;
            std::fs::write(out.join("infer_summary.json"), serde_json::to_string_pretty(&summary)?)?;
            println!("{} images in {:.2}s ({:.1} images/sec)", summary.images, summary.seconds, summary.images_per_sec);
        }
        Command::Eval { pred, gt, out, curves, pooled } => {
            let agg = if pooled { PrAggregation::Pooled } else { PrAggregation::PerImage };
            let ev = evaluate_dirs(&pred, &gt, agg)?;
            for m in &ev.missing {
                log::warn!("no prediction for {m}");
            }
            let r = &ev.report;
            println!("images {}  MAE {:.4}  meanF {:.4}  maxF {:.4}  weightedF {:.4}", r.n_images, r.mae, r.mean_f, r.max_f, r.weighted_f);
            if let Some(p) = out {
                std::fs::write(&p, serde_json::to_string_pretty(r)?)?;
            }
            if let Some(p) = curves {
                std::fs::write(&p, r.sweep.to_csv())?;
            }
        }
        Command::Plot { curves, labels, out } => {
            let mut sweeps = Vec::new();
            for (i, p) in curves.iter().enumerate() {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let label = labels.get(i).cloned().unwrap_or_else(|| p.file_stem().unwrap_or_default().to_string_lossy().into_owned());
                sweeps.push((label, PrSweep::from_csv(&text)?));
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("pr_curve.svg"), pr_curve_svg(&sweeps))?;
            std::fs::write(out.join("f_curve.svg"), f_curve_svg(&sweeps))?;
            println!("wrote pr_curve.svg and f_curve.svg to {}", out.display());
        }
        Command::Ablate { cfg, data, test, presets, out } => {
            let base = cfg.resolve()?;
            let train = load_dir(&data)?;
            let test = load_dir(&test)?;
            std::fs::create_dir_all(&out)?;
            let rows = ablate(&base, &presets, &train, &test, Some(&out))?;
            print!("{}", sodnet::experiment::ablation_markdown(&rows));
        }
    }
    Ok(())
}

fn print_record(r: &RunRecord) {
    println!("config {}  steps {}  checkpoint {}", r.config_hash, r.steps, r.checkpoint_hash);
    for (k, v) in &r.metrics {
        println!("  {k}: {v:.4}");
    }
}
