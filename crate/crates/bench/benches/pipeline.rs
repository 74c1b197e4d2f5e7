use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DMatrix;
use rand::Rng;
use stutterkit_core::classifiers::{gnb_fit, knn_fit, GnbConfig};
use stutterkit_core::dataio::emb::{decode, encode};
use stutterkit_core::dataio::Tensor;
use stutterkit_core::features::statistical_pool;
use stutterkit_core::lda::{lda_fit, lda_transform};
use stutterkit_core::neuralnet::{cross_entropy, BranchNet, NetSpec};
use stutterkit_core::{seed, ClassLabel, FeatureMatrix, NUM_CLASSES};

fn labelled(n: usize, dim: usize, sep: f64, s: u64) -> FeatureMatrix {
    let mut rng = seed::rng(s, &[]);
    let labels: Vec<ClassLabel> = (0..n).map(|i| ClassLabel::from_code(i % NUM_CLASSES).unwrap()).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| {
            (0..dim)
                .map(|j| rng.random_range(-1.0..1.0) + if j % NUM_CLASSES == l.code() { sep } else { 0.0 })
                .collect()
        })
        .collect();
    FeatureMatrix::from_rows(&rows, labels).unwrap()
}

fn frames(t: usize, d: usize) -> Tensor {
    let mut rng = seed::rng(1, &[]);
    Tensor::new(t, d, (0..t * d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn features(c: &mut Criterion) {
    let t = frames(150, 768);
    c.bench_function("statistical_pool 150x768", |b| b.iter(|| statistical_pool(black_box(&t)).unwrap()));
    let bytes = encode(&t).unwrap();
    c.bench_function("emb1 encode 150x768", |b| b.iter(|| encode(black_box(&t)).unwrap()));
    c.bench_function("emb1 decode 150x768", |b| b.iter(|| decode(black_box(&bytes)).unwrap()));
}

fn lda(c: &mut Criterion) {
    let train = labelled(2000, 192, 1.0, 2);
    c.bench_function("lda_fit 2000x192", |b| b.iter(|| lda_fit(black_box(&train), 4, 1e-4).unwrap()));
    let model = lda_fit(&train, 4, 1e-4).unwrap();
    c.bench_function("lda_transform 2000x192", |b| b.iter(|| lda_transform(&model, black_box(&train)).unwrap()));
}

fn classifiers(c: &mut Criterion) {
    let train = labelled(1800, 4, 1.0, 3);
    let held_out = labelled(200, 4, 1.0, 4);
    let queries: Vec<Vec<f64>> = (0..200).map(|i| held_out.row(i)).collect();
    let knn = knn_fit(&train, 5, 2.0).unwrap();
    c.bench_function("knn score 200 queries, n=1800 d=4", |b| {
        b.iter(|| queries.iter().map(|q| knn.score(q).unwrap()).collect::<Vec<_>>())
    });
    let gnb = gnb_fit(&train, &GnbConfig::default()).unwrap();
    c.bench_function("gnb score 200 queries, d=4", |b| {
        b.iter(|| queries.iter().map(|q| gnb.score(q).unwrap()).collect::<Vec<_>>())
    });
}

fn neuralnet(c: &mut Criterion) {
    let mut rng = seed::rng(5, &[]);
    let mut net = BranchNet::new(NetSpec::branch(4, (256, 64), 2), &mut rng);
    let x = DMatrix::from_fn(128, 4, |_, _| rng.random_range(-1.0..1.0));
    let targets: Vec<usize> = (0..128).map(|i| i % 2).collect();
    c.bench_function("branch forward+backward batch 128", |b| {
        b.iter_batched(
            || net.sample_masks(128, &mut seed::rng(6, &[])),
            |masks| {
                let (out, cache) = net.forward_train(&x, &masks);
                let (_, grad) = cross_entropy(&out, &targets, None);
                net.backward(&cache, &grad)
            },
            BatchSize::SmallInput,
        )
    });
    let (_, cache) = net.forward_train(&x, &Vec::new());
    net.update_running_stats(&cache);
    c.bench_function("branch forward_eval batch 128", |b| b.iter(|| net.forward_eval(black_box(&x))));
}

criterion_group!(benches, features, lda, classifiers, neuralnet);
criterion_main!(benches);
