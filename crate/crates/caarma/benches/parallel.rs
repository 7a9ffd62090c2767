//! Parallel vs sequential comparison for the batch-level hot paths.

use caarma::config::ExperimentConfig;
use caarma::features::{extract_fbank, speaker_spec, synthesize_utterance};
use caarma::par::{maybe_par_map, seq_map};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_fbank_batch(c: &mut Criterion) {
    let cfg = ExperimentConfig::desk();
    let waves: Vec<Vec<f64>> = (0..16)
        .map(|i| {
            let spec = speaker_spec(i, 7);
            synthesize_utterance(&spec, 0, &cfg, 7)
        })
        .collect();
    let mut group = c.benchmark_group("fbank_batch");
    group.bench_with_input(BenchmarkId::new("parallel", 16), &waves, |b, w| {
        b.iter(|| maybe_par_map(w, |wave| extract_fbank(wave, &cfg).unwrap()))
    });
    group.bench_with_input(BenchmarkId::new("sequential", 16), &waves, |b, w| {
        b.iter(|| seq_map(w, |wave| extract_fbank(wave, &cfg).unwrap()))
    });
    group.finish();
}

fn bench_synthesis(c: &mut Criterion) {
    let cfg = ExperimentConfig::desk();
    let ids: Vec<usize> = (0..8).collect();
    let mut group = c.benchmark_group("synthesis");
    group.bench_with_input(BenchmarkId::new("parallel", 8), &ids, |b, ids| {
        b.iter(|| {
            maybe_par_map(ids, |&i| {
                let spec = speaker_spec(i, 9);
                synthesize_utterance(&spec, 0, &cfg, 9)
            })
        })
    });
    group.bench_with_input(BenchmarkId::new("sequential", 8), &ids, |b, ids| {
        b.iter(|| {
            seq_map(ids, |&i| {
                let spec = speaker_spec(i, 9);
                synthesize_utterance(&spec, 0, &cfg, 9)
            })
        })
    });
    group.finish();
}

criterion_group!(benches, bench_fbank_batch, bench_synthesis);
criterion_main!(benches);
