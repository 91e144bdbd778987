mod common;

use common::*;
use rand::Rng;
use sodnet::data::{stack_images, synth_dataset, Sample, SynthSpec};
use sodnet::losses::LossConfig;
use sodnet::net::{Model, NetConfig};
use sodnet::train::loss_and_grads;
use sodnet::{Preset, SodError};
use sodnet_tensor::{Graph, ParamStore, Shape, Tensor};

fn build(preset: Preset) -> (Model, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let model = Model::new(NetConfig::toy(preset), &mut store, 9).unwrap();
    (model, store)
}

#[test]
fn total_loss_gradient_matches_finite_differences_in_f64() {
    let spec = SynthSpec { n_images: 2, height: 64, width: 64, ..SynthSpec::default() };
    let ds = synth_dataset(&spec).unwrap();
    let batch: Vec<&Sample> = ds.samples.iter().collect();
    let images = stack_images(&batch).unwrap().cast::<f64>();
    for preset in [Preset::B1, Preset::B2, Preset::B7] {
        let (model, store32) = build(preset);
        let cfg = LossConfig::new(preset.losses());
        let mut store = store32.cast::<f64>();
        let (_, grads) = loss_and_grads(&model, &store, images.clone(), &batch, &cfg).unwrap();
        let mut r = rng(17);
        let ids: Vec<_> = store.ids().collect();
        let mut worst = 0.0f64;
        for _ in 0..12 {
            let id = ids[r.random_range(0..ids.len())];
            let i = r.random_range(0..store.value(id).numel());
            let analytic = grads.params.get(id).map_or(0.0, |t| t.data()[i]);
            let orig = store.value(id).data()[i];
            let mut eval = |v: f64| {
                store.value_mut(id).data_mut()[i] = v;
                loss_and_grads(&model, &store, images.clone(), &batch, &cfg).unwrap().0.l_total
            };
            let h = 1e-5;
            let num = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            eval(orig);
            worst = worst.max(rel_err(analytic, num));
        }
        assert!(worst <= 1e-3, "{preset}: relative error {worst:.2e}");
    }
}

#[test]
fn forward_is_deterministic_and_maps_are_in_range() {
    let (model, store) = build(Preset::B7);
    let mut r = rng(3);
    let x = Tensor::from_vec(Shape([2, 3, 96, 96]), (0..2 * 3 * 96 * 96).map(|_| r.random_range(0.0f32..1.0)).collect()).unwrap();
    let a = model.predict(&store, &x).unwrap();
    let b = model.predict(&store, &x).unwrap();
    assert_eq!(a, b);
    for m in &a {
        let (d, s) = (m.detail.as_ref().unwrap(), m.body.as_ref().unwrap());
        for ((&f, &dv), &bv) in m.fused.data().iter().zip(d.data()).zip(s.data()) {
            assert!((0.0..=1.0).contains(&f) && dv > 0.0 && dv < 1.0 && bv > 0.0 && bv < 1.0);
            assert!((f - (dv + bv).min(1.0)).abs() < 1e-6);
        }
    }
}

#[test]
fn b1_has_no_cascade_or_attention_parameters() {
    let (_, store) = build(Preset::B1);
    for name in store.names() {
        for banned in ["detail", "body", "encoder", "mdab", "mbab", "sampler", "unit"] {
            assert!(!name.contains(banned), "{name}");
        }
    }
    let (_, full) = build(Preset::B7);
    assert!(full.names().any(|n| n.contains("sampler")));
    assert!(full.names().any(|n| n.starts_with("detail_encoder")));
}

#[test]
fn body_first_matches_detail_first_parameter_count() {
    let (_, b2) = build(Preset::B2);
    let (_, b3) = build(Preset::B3);
    assert_eq!(b2.num_scalars(), b3.num_scalars());
    assert!(b2.names().any(|n| n.starts_with("body_encoder")));
}

#[test]
fn rejects_sizes_off_the_stride_grid() {
    let (model, store) = build(Preset::B7);
    for (h, w) in [(32, 32), (100, 96), (96, 80)] {
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::zeros(Shape([1, 3, h, w])));
        assert!(matches!(model.forward(&mut g, x, false), Err(SodError::InputSize { .. })), "{h}x{w}");
    }
}

#[test]
fn zeroed_heads_give_uniform_half_maps() {
    let (model, mut store) = build(Preset::B7);
    for id in store.ids().collect::<Vec<_>>() {
        if store.get(id).name.contains("_head.") {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }
    let maps = model.predict(&store, &Tensor::full(Shape([1, 3, 64, 64]), 0.3)).unwrap();
    assert!(maps[0].detail.as_ref().unwrap().data().iter().all(|&v| v == 0.5));
    assert!(maps[0].fused.data().iter().all(|&v| v == 1.0));
}

#[test]
fn non_finite_parameters_fail_fast_with_block_name() {
    let (model, mut store) = build(Preset::B3);
    let id = store.lookup("detail_head.conv.weight").unwrap();
    store.value_mut(id).data_mut()[0] = f32::NAN;
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::full(Shape([1, 3, 64, 64]), 0.5));
    match model.forward(&mut g, x, false) {
        Err(SodError::NonFinite { block }) => assert!(block.contains("detail"), "{block}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}
