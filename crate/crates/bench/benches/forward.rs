use criterion::{criterion_group, criterion_main, Criterion};
use imu_align::alignment::info_nce_loss;
use imu_align::data::{synth_generate, SynthConfig};
use imu_align::{AlignmentModel, ModelConfig};
use ndarray::Array2;

fn model() -> (AlignmentModel, Vec<imu_align::PairedSample>) {
    let cfg = SynthConfig {
        n_pairs: 16,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg).expect("synth");
    let model = ModelConfig::desk(cfg.n_classes, cfg.vision_feature_dim, 0)
        .build(0)
        .expect("model");
    (model, data)
}

fn forward(c: &mut Criterion) {
    let (model, data) = model();
    c.bench_function("imu_embedding_desk", |b| {
        b.iter(|| model.imu_embedding(&data[0].imu).expect("embed"))
    });
    c.bench_function("vision_embedding_desk", |b| {
        b.iter(|| model.vision_embedding(&data[0]).expect("embed"))
    });
}

fn loss(c: &mut Criterion) {
    let n = 512;
    let sim = Array2::from_shape_fn((n, n), |(i, j)| ((i * 31 + j * 17) % 97) as f32 / 97.0);
    c.bench_function("info_nce_512", |b| {
        b.iter(|| info_nce_loss(sim.view(), 0.07, true).expect("loss"))
    });
}

criterion_group!(benches, forward, loss);
criterion_main!(benches);
