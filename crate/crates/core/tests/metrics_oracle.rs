mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sodnet::imageio::{write_gray, write_mask};
use sodnet::metrics::{evaluate, evaluate_dirs, pr_sweep, weighted_f, Confusion, PrAggregation};
use sodnet::{GrayMask, Grid, GroundTruth};

fn pair(seed: u64, h: usize, w: usize) -> (GrayMask, GroundTruth) {
    let mut r = rng(seed);
    let gt = random_mask(&mut r, h, w);
    let pred = Grid::from_fn(h, w, |_, _| r.random_range(0..=255u8) as f64 / 255.0);
    (pred, gt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn confusion_matches_naive_recount(seed in any::<u64>(), h in 1usize..24, w in 1usize..24) {
        let (pred, gt) = pair(seed, h, w);
        let c = Confusion::compute(&pred, &gt).unwrap();
        for tau in 0..256 {
            prop_assert_eq!(c.pr(tau), naive_pr(&pred, &gt, tau));
        }
    }

    #[test]
    fn weighted_f_matches_reference(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let (pred, gt) = pair(seed, h, w);
        let a = weighted_f(&pred, &gt).unwrap();
        let b = weighted_f_reference(&pred, &gt);
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
    }
}

#[test]
fn pooled_sweep_matches_dataset_counts() {
    let pairs: Vec<_> = (0..6).map(|i| pair(100 + i, 10 + i as usize, 12)).collect();
    let (preds, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let sweep = pr_sweep(&preds, &gts, PrAggregation::Pooled).unwrap();
    for &tau in &[0usize, 64, 128, 200, 255] {
        let (mut tp, mut pp, mut pos) = (0usize, 0usize, 0usize);
        for (p, g) in preds.iter().zip(&gts) {
            for (&v, &f) in p.data().iter().zip(g.grid().data()) {
                let hit = v > tau as f64 / 255.0;
                pp += hit as usize;
                tp += (hit && f) as usize;
                pos += f as usize;
            }
        }
        let precision = if pp == 0 { if pos == 0 { 1.0 } else { 0.0 } } else { tp as f64 / pp as f64 };
        let recall = if pos == 0 { 1.0 } else { tp as f64 / pos as f64 };
        assert_eq!((sweep.precision[tau], sweep.recall[tau]), (precision, recall), "tau {tau}");
    }
}

#[test]
fn weighted_f_fixtures() {
    let gt = GroundTruth::from_binary(5, 5, &[0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0]).unwrap();
    let fixtures = [
        gt.to_gray(),
        GrayMask::zeros(5, 5),
        Grid::filled(5, 5, 1.0),
        gt.to_gray().map(|v| 0.8 * v + 0.1),
        Grid::from_fn(5, 5, |y, x| (y * 5 + x) as f64 / 24.0),
    ];
    for pred in &fixtures {
        let a = weighted_f(pred, &gt).unwrap();
        assert!((a - weighted_f_reference(pred, &gt)).abs() <= 1e-9);
    }
    assert!((weighted_f(&fixtures[0], &gt).unwrap() - 1.0).abs() < 1e-9);
    assert!(weighted_f(&fixtures[1], &gt).unwrap().abs() < 1e-9);
}

#[test]
fn aggregates_do_not_depend_on_order() {
    let pairs: Vec<_> = (0..8).map(|i| pair(200 + i, 16, 16)).collect();
    let (preds, gts): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
    let forward = evaluate(&preds, &gts, PrAggregation::PerImage).unwrap();
    let (rp, rg): (Vec<_>, Vec<_>) = pairs.into_iter().rev().unzip();
    let reversed = evaluate(&rp, &rg, PrAggregation::PerImage).unwrap();
    assert!((forward.mae - reversed.mae).abs() < 1e-12);
    assert!((forward.mean_f - reversed.mean_f).abs() < 1e-12);
    assert!((forward.weighted_f - reversed.weighted_f).abs() < 1e-12);
}

#[test]
fn directory_evaluation_is_idempotent_and_reports_missing() {
    let dir = tempfile::tempdir().unwrap();
    let (pd, gd) = (dir.path().join("pred"), dir.path().join("gt"));
    for i in 0..4 {
        let (p, g) = pair(300 + i, 20, 24);
        if i != 3 {
            write_gray(&pd.join(format!("{i}.png")), &p).unwrap();
        }
        write_mask(&gd.join(format!("{i}.png")), &g).unwrap();
    }
    let a = evaluate_dirs(&pd, &gd, PrAggregation::PerImage).unwrap();
    let b = evaluate_dirs(&pd, &gd, PrAggregation::PerImage).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.n_images, 3);
    assert_eq!(a.missing, vec!["3".to_string()]);
}
