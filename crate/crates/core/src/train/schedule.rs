//! Warm-up then linear-decay learning rates.

/// `(lr_backbone, lr_head)` at `step` of `total`: linear ramp from 0 over the
/// first `warmup_fraction` of steps, then linear decay to 0.
pub fn lr_schedule(step: usize, total: usize, warmup_fraction: f64, max_backbone: f64, max_head: f64) -> (f64, f64) {
    let f = lr_factor(step, total, warmup_fraction);
    (max_backbone * f, max_head * f)
}

pub fn warmup_steps(total: usize, warmup_fraction: f64) -> usize {
    (warmup_fraction * total as f64).ceil() as usize
}

pub fn lr_factor(step: usize, total: usize, warmup_fraction: f64) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    let warm = warmup_steps(total, warmup_fraction).min(total);
    if step < warm {
        step as f64 / warm as f64
    } else {
        (total - step) as f64 / (total - warm) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apex_terminus_and_ratio() {
        let total = 1000;
        let warm = warmup_steps(total, 0.05);
        assert_eq!(warm, 50);
        assert_eq!(lr_schedule(warm, total, 0.05, 0.005, 0.05), (0.005, 0.05));
        assert_eq!(lr_schedule(total, total, 0.05, 0.005, 0.05), (0.0, 0.0));
        assert_eq!(lr_schedule(0, total, 0.05, 0.005, 0.05), (0.0, 0.0));
        for step in 1..total {
            let (b, h) = lr_schedule(step, total, 0.05, 0.005, 0.05);
            assert!((h / b - 10.0).abs() < 1e-12, "step {step}");
        }
    }

    #[test]
    fn monotone_ramp_then_decay() {
        let f: Vec<f64> = (0..=200).map(|s| lr_factor(s, 200, 0.05)).collect();
        assert!(f[..=10].windows(2).all(|w| w[1] > w[0]));
        assert!(f[10..].windows(2).all(|w| w[1] < w[0]));
        assert_eq!(lr_factor(5, 200, 0.0), 0.975);
    }
}
