use criterion::{black_box, criterion_group, criterion_main, Criterion};

use iqamix_bench::{logits, paired, skewed_mos};
use iqamix_core::datasets::subsample_balanced;
use iqamix_core::manifest::{sample_mixture, MixtureCounts, MixturePools};
use iqamix_core::metrics::{plcc, srcc, PairedSample};
use iqamix_core::mixopt::{argmax_ratio, fit_curve};
use iqamix_core::scoring::{score_from_logits, LevelLogits};
use iqamix_core::LevelScale;

fn scoring(c: &mut Criterion) {
    let rows: Vec<LevelLogits> = logits(10_000, 1)
        .into_iter()
        .enumerate()
        .map(|(i, x)| LevelLogits::new(i.to_string(), x))
        .collect();
    c.bench_function("score_from_logits x10k", |b| {
        b.iter(|| {
            rows.iter()
                .map(|x| score_from_logits(black_box(x)).unwrap().score)
                .sum::<f64>()
        })
    });
}

fn correlation(c: &mut Criterion) {
    let (x, y) = paired(100_000, 2);
    let sample = PairedSample::new(x, y).unwrap();
    c.bench_function("srcc n=1e5", |b| {
        b.iter(|| srcc(black_box(&sample)).unwrap())
    });
    c.bench_function("plcc n=1e5", |b| {
        b.iter(|| plcc(black_box(&sample)).unwrap())
    });
}

fn curve(c: &mut Criterion) {
    // 19-point grid, 3 repeats, quadratic bump in log10 ratio
    let points: Vec<(f64, f64)> = (0..19)
        .flat_map(|k| {
            let t = (k as f64 - 9.0) / 9.0;
            (0..3).map(move |r| (t, 0.8 - 0.3 * (t - 0.38).powi(2) + 1e-3 * r as f64))
        })
        .collect();
    c.bench_function("fit_curve + argmax_ratio", |b| {
        b.iter(|| argmax_ratio(&fit_curve(black_box(&points)).unwrap()))
    });
}

fn sampling(c: &mut Criterion) {
    let scale = LevelScale::new(0.0, 100.0).unwrap();
    let records = skewed_mos(40_000, 3);
    c.bench_function("subsample_balanced 40k -> 10k", |b| {
        b.iter(|| subsample_balanced(black_box(&records), &scale, 10_000, 10, 7).unwrap())
    });

    let pools = MixturePools::synthetic(16_000, 150_000, 150_000);
    let counts = MixtureCounts::new(16_000, 40_000, 16_640);
    c.bench_function("sample_mixture 72k", |b| {
        b.iter(|| sample_mixture(black_box(&pools), counts, 11, false).unwrap())
    });
}

criterion_group!(benches, scoring, correlation, curve, sampling);
criterion_main!(benches);
