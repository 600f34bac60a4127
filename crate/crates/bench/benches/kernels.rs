use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gprd_bench::{cluttered_scan, random_scan, random_tensor};
use gprd_core::metrics::ms_ssim_with_grad;
use gprd_core::network::layers::Conv2d;
use gprd_core::{rpca_decompose, svd_removal, CrNetConfig, CrNetModel, MsSsimConfig, RpcaOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layer = Conv2d::new(32, 32, 3);
    layer.init_gaussian(&mut rng, 0.1);
    let x = random_tensor(1, [1, 32, 64, 32]);
    c.bench_function("conv3x3_32ch_64x32", |b| b.iter(|| layer.infer(black_box(&x)).unwrap()));
}

fn forward(c: &mut Criterion) {
    let model = CrNetModel::new(CrNetConfig::with_base_width(8)).unwrap();
    let x = random_tensor(2, [1, 1, 256, 64]);
    c.bench_function("crnet_b8_infer_256x64", |b| b.iter(|| model.infer(black_box(&x)).unwrap()));

    let mut train_model = model.clone();
    let batch = random_tensor(3, [4, 1, 64, 32]);
    c.bench_function("crnet_b8_train_step_4x64x32", |b| {
        b.iter(|| {
            let y = train_model.forward_train(black_box(&batch)).unwrap();
            train_model.zero_grad();
            train_model.backward(&y)
        })
    });
}

fn classical(c: &mut Criterion) {
    let scan = cluttered_scan(256, 64).normalize_unit();
    c.bench_function("svd_removal_256x64", |b| b.iter(|| svd_removal(black_box(&scan), 1).unwrap()));
    let opts = RpcaOptions::default();
    c.bench_function("rpca_256x64", |b| b.iter(|| rpca_decompose(black_box(scan.data()), &opts).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let (y, g) = (random_scan(4, 256, 64), random_scan(5, 256, 64));
    let cfg = MsSsimConfig::default();
    c.bench_function("ms_ssim_with_grad_256x64", |b| {
        b.iter(|| ms_ssim_with_grad(black_box(y.data()), g.data(), &cfg).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = conv, forward, classical, metrics
}
criterion_main!(kernels);
