use discgan_tensor::{adain, instance_stats, Tensor};
use proptest::prelude::*;

fn plane_tensor(n: usize, c: usize, h: usize, w: usize, vals: Vec<f64>) -> Tensor<f64> {
    Tensor::new([n, c, h, w], vals).unwrap()
}

fn features() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..3, 1usize..4, 2usize..6, 2usize..6).prop_flat_map(|(n, c, h, w)| {
        prop::collection::vec(-3.0f64..3.0, n * c * h * w)
            .prop_map(move |v| plane_tensor(n, c, h, w, v))
    })
}

proptest! {
    #[test]
    fn adain_is_idempotent(x in features(), m in -2.0f64..2.0, s in 0.01f64..3.0) {
        let c = x.shape()[1];
        let mean: Vec<f64> = (0..c).map(|i| m + i as f64 * 0.1).collect();
        let std: Vec<f64> = (0..c).map(|i| s * (1.0 + i as f64 * 0.2)).collect();
        let once = adain(&x, &mean, &std).unwrap();
        let twice = adain(&once, &mean, &std).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn adain_output_carries_target_stats(x in features(), m in -2.0f64..2.0, s in 0.01f64..3.0) {
        let c = x.shape()[1];
        let stats_in = instance_stats(&x);
        let mean = vec![m; c];
        let std = vec![s; c];
        let y = adain(&x, &mean, &std).unwrap();
        let st = instance_stats(&y);
        for p in 0..st.mean.len() {
            prop_assert!((st.mean[p] - m).abs() < 1e-9);
            // Constant input planes collapse to the mean; others hit the target std.
            if stats_in.var[p] > 1e-12 {
                prop_assert!((st.std[p] - s).abs() < 1e-9, "{} vs {}", st.std[p], s);
            }
        }
    }

    #[test]
    fn adain_preserves_rank_order(x in features(), s in 0.1f64..3.0) {
        let c = x.shape()[1];
        let y = adain(&x, &vec![0.5; c], &vec![s; c]).unwrap();
        let [n, _, h, w] = x.shape();
        let hw = h * w;
        for p in 0..n * c {
            let xs = &x.data()[p * hw..(p + 1) * hw];
            let ys = &y.data()[p * hw..(p + 1) * hw];
            for i in 0..hw {
                for j in 0..hw {
                    if xs[i] < xs[j] {
                        prop_assert!(ys[i] <= ys[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn instance_stats_permutation_invariant(vals in prop::collection::vec(-5.0f64..5.0, 12), rot in 0usize..12) {
        let a = plane_tensor(1, 1, 3, 4, vals.clone());
        let mut rotated = vals;
        rotated.rotate_left(rot);
        let b = plane_tensor(1, 1, 3, 4, rotated);
        let (sa, sb) = (instance_stats(&a), instance_stats(&b));
        prop_assert!((sa.mean[0] - sb.mean[0]).abs() < 1e-12);
        prop_assert!((sa.std[0] - sb.std[0]).abs() < 1e-12);
    }
}
