use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use qc_core::cepstral::{CepstralConfig, CepstralExtractor, CepstralKind};
use qc_core::neural::{NetInput, NetworkParams, NetworkSpec};
use qc_core::signal::{AccelRecord, ChannelId};
use qc_core::spectral::FftPlan;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [64usize, 512, 4096] {
        let plan = FftPlan::new(n).unwrap();
        let frame: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &frame, |b, f| {
            b.iter(|| plan.periodogram(black_box(f)))
        });
    }
    group.finish();
}

fn cepstral(c: &mut Criterion) {
    let sr = 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<f64> = (0..4000).map(|_| rng.random_range(-3.0..3.0)).collect();
    let rec = AccelRecord::new(samples, sr, ChannelId::TopX).unwrap();
    let ex = CepstralExtractor::new(sr, CepstralConfig::default()).unwrap();
    c.bench_function("mfb_40s_record", |b| {
        b.iter(|| ex.extract(black_box(&rec), CepstralKind::Mfb).unwrap())
    });
    c.bench_function("mfcc_40s_record", |b| {
        b.iter(|| ex.extract(black_box(&rec), CepstralKind::Mfcc).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = NetworkParams::init(&NetworkSpec::drift_regressor(16), &mut rng).unwrap();
    let seqs: Vec<Array2<f64>> = (0..8)
        .map(|_| Array2::from_shape_fn((99, 16), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
    let input = NetInput::sequences(&views, &[99; 8]).unwrap();
    let targets = [0.05; 8];
    let mut group = c.benchmark_group("drift_regressor_batch8_t99");
    group.sample_size(10);
    group.bench_function("predict", |b| b.iter(|| params.predict(black_box(&input)).unwrap()));
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let trace = params.forward_with_dropout(black_box(&input), None).unwrap();
            params.backward(&trace, &targets).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, fft, cepstral, network);
criterion_main!(benches);
