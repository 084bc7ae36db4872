use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use mdiqkd::decoy::{
    analyze, reference_rates, y11_oracle_lp, DEFAULT_CUTOFF, DEFAULT_EC_INEFFICIENCY,
};
use mdiqkd::expected::DEFAULT_QUADRATURE_POINTS;
use mdiqkd::montecarlo::{run_monte_carlo_with, Execution, DEFAULT_BATCH};
use mdiqkd::{
    expected_tallies, fluct_bounds, pair_pulse_counts, Basis, ChannelParams, DetectorParams,
    FluctuationConfig, ProtocolConfig,
};

fn benches(c: &mut Criterion) {
    let cfg = ProtocolConfig::default();
    let (ch, det) = (ChannelParams::default(), DetectorParams::default());
    let fluct = FluctuationConfig::default();
    let rates = reference_rates();

    c.bench_function("expected_tallies", |b| {
        b.iter(|| expected_tallies(black_box(&cfg), &ch, &det, DEFAULT_QUADRATURE_POINTS).unwrap())
    });
    c.bench_function("monte_carlo_batch", |b| {
        b.iter(|| {
            run_monte_carlo_with(
                &cfg,
                &ch,
                &det,
                DEFAULT_BATCH,
                black_box(1),
                DEFAULT_BATCH,
                Execution::Sequential,
            )
            .unwrap()
        })
    });
    let bounded = fluct_bounds(&rates, &pair_pulse_counts(&cfg), &fluct).unwrap();
    c.bench_function("lp_oracle_x", |b| {
        b.iter(|| {
            y11_oracle_lp(
                black_box(&bounded),
                Basis::X,
                &cfg.intensities,
                DEFAULT_CUTOFF,
            )
            .unwrap()
        })
    });
    c.bench_function("key_rate_chain", |b| {
        b.iter(|| analyze(black_box(&rates), &cfg, &fluct, DEFAULT_EC_INEFFICIENCY).unwrap())
    });
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
