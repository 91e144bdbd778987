use sodnet_tensor::{Graph, NodeId, ParamStore, Shape, Tensor};

/// Deterministic pseudo-random values in [-1, 1).
fn noise(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Check d/dx sum(f(x) * r) against central differences for each input.
fn gradcheck(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId) {
    let store = ParamStore::new();
    let run = |xs: &[Tensor<f64>]| -> (Tensor<f64>, Vec<Tensor<f64>>) {
        let mut g = Graph::new(&store);
        let ids: Vec<NodeId> = xs.iter().map(|t| g.input_tracked(t.clone())).collect();
        let out = f(&mut g, &ids);
        let r = noise(g.shape(out), 99);
        let grads = g.backward(vec![(out, r)]).unwrap();
        let gs = ids.iter().map(|&i| grads.input(i).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(i)))).collect();
        (g.value(out).clone(), gs)
    };
    let objective = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new(&store);
        let ids: Vec<NodeId> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &ids);
        let r = noise(g.shape(out), 99);
        g.value(out).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let (_, analytic) = run(&inputs);
    let h = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let an = analytic[k].data()[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            assert!(err < 1e-5, "input {k} elem {i}: fd {fd} analytic {an}");
        }
    }
}

#[test]
fn conv_matches_direct_sum() {
    let x = noise(Shape::new(2, 3, 7, 6), 1);
    let w = noise(Shape::new(4, 3, 3, 3), 2);
    let b = noise(Shape::new(1, 4, 1, 1), 3);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (xi, wi, bi) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
    let y = g.conv2d(xi, wi, Some(bi), 2, 1).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), Shape::new(2, 4, 4, 3));
    for n in 0..2 {
        for co in 0..4 {
            for oy in 0..4 {
                for ox in 0..3 {
                    let mut acc = b.data()[co];
                    for ci in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..7).contains(&iy) && (0..6).contains(&ix) {
                                    acc += x.at([n, ci, iy as usize, ix as usize]) * w.at([co, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    assert!((acc - out.at([n, co, oy, ox])).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn bilinear_upsample_matches_half_pixel_convention() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xi = g.input(x);
    let y = g.resize(xi, 4, 4).unwrap();
    let row0: Vec<f64> = g.value(y).data()[..4].to_vec();
    assert_eq!(row0, vec![1.0, 1.25, 1.75, 2.0]);
    let row1: Vec<f64> = g.value(y).data()[4..8].to_vec();
    assert_eq!(row1, vec![1.5, 1.75, 2.25, 2.5]);
}

#[test]
fn adaptive_pool_uses_overlapping_bins_for_uneven_sizes() {
    let x = Tensor::from_fn(Shape::new(1, 1, 1, 6), |[_, _, _, i]| i as f64);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xi = g.input(x);
    let y = g.avg_pool(xi, 1, 4).unwrap();
    // bins [0,2) [1,3) [3,5) [4,6)
    assert_eq!(g.value(y).data(), &[0.5, 1.5, 3.5, 4.5]);
}

#[test]
fn grad_conv_strided_padded() {
    gradcheck(
        vec![noise(Shape::new(2, 3, 5, 6), 1), noise(Shape::new(2, 3, 3, 3), 2), noise(Shape::new(1, 2, 1, 1), 3)],
        |g, ids| g.conv2d(ids[0], ids[1], Some(ids[2]), 2, 1).unwrap(),
    );
}

#[test]
fn grad_conv_pointwise() {
    gradcheck(vec![noise(Shape::new(2, 3, 4, 4), 4), noise(Shape::new(5, 3, 1, 1), 5)], |g, ids| {
        g.conv2d(ids[0], ids[1], None, 1, 0).unwrap()
    });
}

#[test]
fn grad_broadcast_mul_add() {
    gradcheck(
        vec![noise(Shape::new(2, 3, 4, 4), 6), noise(Shape::new(2, 1, 4, 4), 7), noise(Shape::new(2, 3, 1, 1), 8)],
        |g, ids| {
            let att = g.add(ids[1], ids[2]).unwrap();
            g.mul(ids[0], att).unwrap()
        },
    );
}

#[test]
fn grad_relu_sigmoid_clamp() {
    gradcheck(vec![noise(Shape::new(1, 2, 3, 3), 9)], |g, ids| {
        let r = g.relu(ids[0]);
        let s = g.sigmoid(ids[0]);
        let sum = g.add(r, s).unwrap();
        g.clamp(sum, 0.0, 1.0)
    });
}

#[test]
fn grad_group_norm() {
    gradcheck(
        vec![noise(Shape::new(2, 4, 3, 3), 10), noise(Shape::new(1, 4, 1, 1), 11), noise(Shape::new(1, 4, 1, 1), 12)],
        |g, ids| g.group_norm(ids[0], ids[1], ids[2], 2).unwrap(),
    );
}

#[test]
fn grad_pool_resize_concat() {
    gradcheck(vec![noise(Shape::new(1, 2, 6, 6), 13), noise(Shape::new(1, 1, 6, 6), 14)], |g, ids| {
        let p = g.avg_pool(ids[0], 2, 2).unwrap();
        let up = g.resize(p, 6, 6).unwrap();
        let down = g.resize(ids[1], 4, 5).unwrap();
        let back = g.resize(down, 6, 6).unwrap();
        g.concat(&[up, back]).unwrap()
    });
}

#[test]
fn shared_param_reports_each_use() {
    let mut store = ParamStore::new();
    let w = store.register("w", noise(Shape::new(2, 2, 1, 1), 20)).unwrap();
    let mut g = Graph::new(&store);
    let x = g.input(noise(Shape::new(1, 2, 3, 3), 21));
    let mut acc = x;
    let mut manual = Tensor::zeros(Shape::new(2, 2, 1, 1));
    for _ in 0..3 {
        let wi = g.param(w);
        acc = g.conv2d(acc, wi, None, 1, 0).unwrap();
    }
    let ones = Tensor::full(g.shape(acc), 1.0);
    let grads = g.backward(vec![(acc, ones)]).unwrap();
    assert_eq!(grads.params.contributions(w), 3);
    manual.add_assign(grads.params.get(w).unwrap());
    assert!(manual.is_finite());
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let store = ParamStore::new();
        let mut g = Graph::<f32>::new(&store);
        let x = g.input(noise(Shape::new(2, 8, 16, 16), 30).cast());
        let w = g.input(noise(Shape::new(8, 8, 3, 3), 31).cast());
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let p = g.avg_pool(y, 4, 4).unwrap();
        let u = g.resize(p, 16, 16).unwrap();
        g.value(u).clone()
    };
    assert_eq!(run().data(), run().data());
}
