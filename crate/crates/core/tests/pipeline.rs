use sodnet::data::{generate_synthetic, load_folder, synth_dataset, Dataset, SynthSpec};
use sodnet::experiment::{run, RunRecord};
use sodnet::imageio::read_gray;
use sodnet::infer::{infer_dir, load_model, InferOptions};
use sodnet::train::checkpoint::Checkpoint;
use sodnet::train::config::TrainConfig;
use sodnet::train::Trainer;
use sodnet::{Preset, SodError};

fn small_spec() -> SynthSpec {
    SynthSpec { n_images: 6, height: 64, width: 64, ..SynthSpec::default() }
}

fn small_cfg(preset: Preset) -> TrainConfig {
    TrainConfig { preset, epochs: 2, batch_size: 2, input_size: 64, ..TrainConfig::desk() }
}

#[test]
fn resume_mid_epoch_reproduces_the_trajectory() {
    let ds = synth_dataset(&small_spec()).unwrap();
    let mut straight = Trainer::new(small_cfg(Preset::B7)).unwrap();
    let losses: Vec<f64> = (0..5).map(|_| straight.train_step(&ds).unwrap().loss.l_total).collect();

    let mut first = Trainer::new(small_cfg(Preset::B7)).unwrap();
    for _ in 0..2 {
        first.train_step(&ds).unwrap();
    }
    let bytes = first.checkpoint(ds.len()).to_bytes();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let tail: Vec<f64> = (0..3).map(|_| resumed.train_step(&ds).unwrap().loss.l_total).collect();
    assert_eq!(&losses[2..], &tail[..]);
    assert_eq!(straight.store.value(straight.store.ids().next().unwrap()), resumed.store.value(resumed.store.ids().next().unwrap()));
}

#[test]
fn non_finite_training_reports_the_batch() {
    let ds = synth_dataset(&small_spec()).unwrap();
    let mut t = Trainer::new(small_cfg(Preset::B1)).unwrap();
    let id = t.store.lookup("saliency_head.conv.bias").unwrap();
    t.store.value_mut(id).data_mut()[0] = f32::INFINITY;
    match t.train_step(&ds) {
        Err(SodError::NonFiniteLoss { step, batch_id }) => {
            assert_eq!(step, 0);
            assert_eq!(batch_id.split(',').count(), 2);
        }
        other => panic!("expected NonFiniteLoss, got {:?}", other.map(|r| r.loss.l_total)),
    }
}

#[test]
fn corpus_generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { n_images: 5, ..small_spec() };
    generate_synthetic(&spec, &dir.path().join("a")).unwrap();
    generate_synthetic(&spec, &dir.path().join("b")).unwrap();
    for sub in ["images", "masks"] {
        for e in std::fs::read_dir(dir.path().join("a").join(sub)).unwrap() {
            let p = e.unwrap().path();
            let q = dir.path().join("b").join(sub).join(p.file_name().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        }
    }
    let loaded = load_folder(&dir.path().join("a/images"), &dir.path().join("a/masks"), None).unwrap();
    let direct = synth_dataset(&spec).unwrap();
    assert_eq!(loaded.dataset.len(), 5);
    for (a, b) in loaded.dataset.samples.iter().zip(&direct.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.detail, b.detail);
    }
}

#[test]
fn run_writes_artifacts_and_inference_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let train = generate_synthetic(&small_spec(), &root.join("train")).unwrap();
    let test_spec = SynthSpec { n_images: 3, first_index: 6, height: 80, width: 72, ..small_spec() };
    let test = generate_synthetic(&test_spec, &root.join("test")).unwrap();
    let cfg = TrainConfig { checkpoint_every: 1, ..small_cfg(Preset::B7) };
    let out = run(Trainer::new(cfg.clone()).unwrap(), &train, Some(&test), Some(&test), Some(&root.join("run"))).unwrap();
    for f in ["run.json", "train_log.jsonl", "final.ckpt", "epoch001.ckpt", "epoch002.ckpt", "curves.csv"] {
        assert!(root.join("run").join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(root.join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let record = RunRecord::load(&root.join("run/run.json")).unwrap();
    assert_eq!(record, out.record);
    assert_eq!(record.config_hash, cfg.hash());
    assert!(record.metrics.contains_key("mean_f"));
    assert!(out.trainer.best_val_mae.is_some());

    let ckpt = Checkpoint::load(&root.join("run/final.ckpt")).unwrap();
    let opts = InferOptions { dump_detail: true, dump_body: true, dump_attention: true, ..InferOptions::default() };
    let (o1, o2) = (root.join("pred1"), root.join("pred2"));
    let summary = infer_dir(&ckpt, &root.join("test/images"), &o1, &opts).unwrap();
    infer_dir(&ckpt, &root.join("test/images"), &o2, &opts).unwrap();
    assert_eq!(summary.images, 3);
    assert!(summary.images_per_sec > 0.0);
    for p in &summary.outputs {
        let q = o2.join(p.strip_prefix(&o1).unwrap());
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(&q).unwrap());
    }
    for s in &test.samples {
        let fused = read_gray(&o1.join(format!("{}.png", s.id))).unwrap();
        assert_eq!(fused.dims(), (80, 72));
        let d = read_gray(&o1.join(format!("{}_detail.png", s.id))).unwrap();
        let b = read_gray(&o1.join(format!("{}_body.png", s.id))).unwrap();
        for ((f, d), b) in fused.data().iter().zip(d.data()).zip(b.data()) {
            assert!((f - (d + b).min(1.0)).abs() <= 1.0 / 255.0 + 1e-12);
        }
        assert!(std::fs::read_dir(o1.join("attention").join(&s.id)).unwrap().count() > 0);
    }

    let other = TrainConfig { seed: 8, ..cfg };
    match load_model(&ckpt, Some(&other.hash())) {
        Err(SodError::ConfigMismatch { expected, found }) => {
            assert_eq!(expected, other.hash());
            assert_eq!(found, ckpt.header.config_hash);
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("mismatched config accepted"),
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let t = Trainer::new(small_cfg(Preset::B1)).unwrap();
    assert!(matches!(run(t, &Dataset { samples: vec![] }, None, None, None), Err(SodError::Empty(_))));
}
