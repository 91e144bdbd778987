use proptest::prelude::*;
use sodnet_tensor::kernels::{adaptive_avg_pool, adaptive_avg_pool_backward, resize_bilinear, resize_bilinear_backward};
use sodnet_tensor::{Shape, Tensor};

fn tensor(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut s = seed | 1;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 2001) as f64 / 1000.0 - 1.0
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pool_backward_is_the_adjoint(h in 1usize..13, w in 1usize..13, oh in 1usize..13, ow in 1usize..13, seed in any::<u64>()) {
        let (oh, ow) = (oh.min(h), ow.min(w));
        let in_shape = Shape([1, 2, h, w]);
        let x = tensor(in_shape, seed);
        let y = tensor(Shape([1, 2, oh, ow]), seed ^ 0x9e37);
        let lhs = dot(&adaptive_avg_pool(&x, oh, ow), &y);
        let rhs = dot(&x, &adaptive_avg_pool_backward(&y, in_shape));
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn resize_backward_is_the_adjoint(h in 1usize..13, w in 1usize..13, oh in 1usize..25, ow in 1usize..25, seed in any::<u64>()) {
        let in_shape = Shape([2, 1, h, w]);
        let x = tensor(in_shape, seed);
        let y = tensor(Shape([2, 1, oh, ow]), seed ^ 0x51ed);
        let lhs = dot(&resize_bilinear(&x, oh, ow), &y);
        let rhs = dot(&x, &resize_bilinear_backward(&y, in_shape));
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn resize_preserves_constants(h in 1usize..10, w in 1usize..10, oh in 1usize..30, ow in 1usize..30, v in -5.0f64..5.0) {
        let out = resize_bilinear(&Tensor::full(Shape([1, 1, h, w]), v), oh, ow);
        prop_assert!(out.data().iter().all(|&o| (o - v).abs() < 1e-12));
    }
}
