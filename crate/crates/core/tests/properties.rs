use gprd_core::network::layers::Conv2d;
use gprd_core::network::Tensor4;
use gprd_core::simulator::{hybridize, synth_pair};
use gprd_core::{
    mean_subtraction, rpca_decompose, svd_removal, CrNetConfig, CrNetModel, DatasetConfig, Radargram, RpcaOptions,
    SurfaceKind,
};
use ndarray::Array2;
use proptest::prelude::*;

fn grid(h: std::ops::Range<usize>, w: std::ops::Range<usize>) -> impl Strategy<Value = Radargram> {
    (h, w).prop_flat_map(|(h, w)| {
        prop::collection::vec(-5.0f64..5.0, h * w)
            .prop_map(move |v| Radargram::new(Array2::from_shape_vec((h, w), v).unwrap()).unwrap())
    })
}

fn fro(a: ndarray::ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mean_subtraction_zeroes_window_mean(r in grid(2..20, 2..16), a in 1usize..16, len in 0usize..16) {
        let w = r.width();
        let a = a.min(w);
        let b = (a + len).min(w);
        let out = mean_subtraction(&r, a, b).unwrap();
        for row in out.data().rows() {
            let mean: f64 = row.iter().skip(a - 1).take(b - a + 1).sum::<f64>() / (b - a + 1) as f64;
            prop_assert!(mean.abs() <= 1e-12);
        }
    }

    #[test]
    fn svd_removal_is_an_orthogonal_split(r in grid(2..16, 2..16), k in 1usize..4) {
        let (h, w) = r.dim();
        let out = svd_removal(&r, k.min(h).min(w)).unwrap();
        let removed = &r.data() - &out.data();
        // Residual and removed part are orthogonal, so energies add.
        let total = fro(r.data()).powi(2);
        let parts = fro(out.data()).powi(2) + fro(removed.view()).powi(2);
        prop_assert!((total - parts).abs() <= 1e-9 * total.max(1.0));
        prop_assert!(fro(out.data()) <= fro(r.data()) * (1.0 + 1e-12));
    }

    #[test]
    fn svd_removing_everything_leaves_nothing(r in grid(2..12, 2..12)) {
        let (h, w) = r.dim();
        let out = svd_removal(&r, h.min(w)).unwrap();
        prop_assert!(fro(out.data()) <= 1e-9 * fro(r.data()).max(1.0));
    }

    #[test]
    fn rpca_parts_sum_to_input(r in grid(4..20, 4..20), lambda in 0.02f64..0.5) {
        let opts = RpcaOptions { lambda, ..RpcaOptions::default() };
        let res = rpca_decompose(r.data(), &opts).unwrap();
        let recon = &res.low_rank + &res.sparse;
        let err = fro((&recon - &r.data()).view());
        if res.converged {
            prop_assert!(err <= opts.tol * fro(r.data()) * (1.0 + 1e-9));
        }
        prop_assert_eq!(res.objective.len(), res.iterations);
    }

    #[test]
    fn rpca_is_scale_equivariant(r in grid(4..12, 4..12), c in 0.1f64..10.0) {
        let opts = RpcaOptions::default();
        let a = rpca_decompose(r.data(), &opts).unwrap();
        let scaled = r.data().mapv(|v| c * v);
        let b = rpca_decompose(scaled.view(), &opts).unwrap();
        let scale = fro(r.data()).max(1e-12);
        let diff = fro((&b.low_rank - &a.low_rank.mapv(|v| c * v)).view());
        prop_assert!(diff <= 1e-6 * c * scale, "{}", diff);
    }

    #[test]
    fn hybrid_pairs_are_unit_ranged(clutter in grid(8..16, 8..12), seed in 0u64..1000, mix in 0.05f64..1.0) {
        let (h, w) = clutter.dim();
        let clean = Radargram::new(Array2::from_shape_fn((h, w), |(i, j)| ((i * 7 + j * 3) as f64 + seed as f64).sin())).unwrap();
        let pair = hybridize(&clutter, &clean, mix).unwrap();
        for r in [pair.raw(), pair.clutter_free()] {
            let (lo, hi) = r.min_max();
            prop_assert!(lo >= 0.0 && hi <= 1.0);
        }
    }

    #[test]
    fn conv_is_linear_without_bias(seed in 0u64..500, a in -2.0f64..2.0) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Conv2d::without_bias(2, 3, 3);
        conv.init_gaussian(&mut rng, 0.5);
        let x = Tensor4::from_fn([1, 2, 5, 4], |[_, c, i, j]| ((seed as usize + c * 31 + i * 7 + j) as f64).cos());
        let y = Tensor4::from_fn([1, 2, 5, 4], |[_, c, i, j]| ((seed as usize + c * 13 + i + j * 5) as f64).sin());
        let combo = Tensor4::from_vec([1, 2, 5, 4], x.data().iter().zip(y.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        let lhs = conv.infer(&combo).unwrap();
        let (fx, fy) = (conv.infer(&x).unwrap(), conv.infer(&y).unwrap());
        for ((l, p), q) in lhs.data().iter().zip(fx.data()).zip(fy.data()) {
            prop_assert!((l - (a * p + q)).abs() <= 1e-12);
        }
    }

    #[test]
    fn channel_split_inverts_concat(c1 in 1usize..4, c2 in 1usize..4, n in 1usize..3) {
        let a = Tensor4::from_fn([n, c1, 3, 2], |[b, c, i, j]| (b * 100 + c * 10 + i * 2 + j) as f64);
        let b = Tensor4::from_fn([n, c2, 3, 2], |[b, c, i, j]| -((b * 100 + c * 10 + i * 2 + j) as f64));
        let joined = Tensor4::concat_channels(&[&a, &b]);
        prop_assert_eq!(joined.shape(), [n, c1 + c2, 3, 2]);
        let parts = joined.split_channels(&[c1, c2]);
        prop_assert_eq!(&parts[0], &a);
        prop_assert_eq!(&parts[1], &b);
    }

    #[test]
    fn dataset_config_round_trips(seed in any::<u64>(), count in 1usize..200, rough in 0.0f64..0.1) {
        let cfg = DatasetConfig {
            seed,
            count,
            roughness_amp: rough,
            surfaces: vec![SurfaceKind::Grass, SurfaceKind::Flat],
            ..DatasetConfig::default()
        };
        prop_assert_eq!(DatasetConfig::from_key_values(&cfg.to_key_values()).unwrap(), cfg);
    }
}

#[test]
fn simulated_raw_is_clutter_plus_clean() {
    let cfg = DatasetConfig {
        count: 6,
        seed: 9,
        scene_height: 64,
        scene_width: 32,
        ..DatasetConfig::default()
    };
    for scene in cfg.scenes().unwrap() {
        let pair = synth_pair(&scene).unwrap();
        let clutter = gprd_core::simulator::synth_clutter(&scene).unwrap();
        let diff = &pair.raw().data() - &pair.clutter_free().data();
        assert_eq!(diff, clutter.data());
    }
}

#[test]
fn checkpoint_preserves_inference() {
    let model = CrNetModel::new(CrNetConfig {
        seed: 5,
        ..CrNetConfig::with_base_width(3)
    })
    .unwrap();
    let mut bytes = Vec::new();
    model.write_to(&mut bytes).unwrap();
    let back = CrNetModel::from_bytes(&bytes).unwrap();
    let x = Tensor4::from_fn([1, 1, 16, 32], |[_, _, i, j]| ((i * 3 + j) as f64 * 0.1).sin());
    // Weights are stored as binary32.
    let (a, b) = (model.infer(&x).unwrap(), back.infer(&x).unwrap());
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() <= 1e-5 * (1.0 + p.abs()), "{p} vs {q}");
    }
}
