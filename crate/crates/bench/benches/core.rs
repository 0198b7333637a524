use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use liahr::corpus::{LabelKind, LabelSet, LabelSpace, SeededSampler};
use liahr::engine::{plan_prompts, run, QueryLabelSource, RunConfig};
use liahr::gateway::{BackendConfig, Gateway, MockSpec};
use liahr::metrics;
use liahr::prompt::PromptMode;
use liahr::stats::{binomial_two_sided_doubled, chi2_independence_yates, ContingencyTable2x2};
use liahr::synth::{synthetic_corpus, SynthSpec};

fn space() -> LabelSpace {
    LabelSpace::new(
        "emo",
        LabelKind::Multilabel,
        [
            "anger",
            "anticipation",
            "disgust",
            "fear",
            "joy",
            "love",
            "optimism",
            "pessimism",
            "sadness",
            "surprise",
            "trust",
        ],
    )
    .unwrap()
}

fn random_pairs(n: usize) -> Vec<(LabelSet, LabelSet)> {
    let mut s = SeededSampler::new(1, "bench:pairs");
    let set = |s: &mut SeededSampler| LabelSet::from_indices((0..11).filter(|_| s.bernoulli(0.2)));
    (0..n).map(|_| (set(&mut s), set(&mut s))).collect()
}

fn bench_metrics(c: &mut Criterion) {
    let pairs = random_pairs(5000);
    let mut g = c.benchmark_group("metrics");
    g.bench_function("jaccard_5000", |b| {
        b.iter(|| metrics::jaccard_samples(black_box(&pairs)))
    });
    g.bench_function("micro_f1_5000", |b| {
        b.iter(|| metrics::micro_f1(black_box(&pairs)))
    });
    g.bench_function("macro_f1_5000", |b| {
        b.iter(|| metrics::macro_f1(black_box(&pairs), 11))
    });
    g.finish();
}

fn bench_stats(c: &mut Criterion) {
    let table = ContingencyTable2x2([[42, 18], [12, 27]]);
    c.bench_function("chi2_yates", |b| {
        b.iter(|| chi2_independence_yates(black_box(&table)))
    });
    c.bench_function("binomial_doubled_500", |b| {
        b.iter(|| binomial_two_sided_doubled(black_box(330), 500))
    });
}

fn bench_engine(c: &mut Criterion) {
    let corpus = synthetic_corpus(&SynthSpec::new(space(), 1000, 7)).unwrap();
    let config = RunConfig::new(PromptMode::Liahr, 8)
        .with_source(QueryLabelSource::Random)
        .with_queries(100);
    c.bench_function("plan_100_liahr_prompts", |b| {
        b.iter(|| plan_prompts(black_box(&corpus), &config).unwrap())
    });
    let gateway = Gateway::from_config(
        &BackendConfig::mock(MockSpec::GoldOracle {
            truth: BTreeMap::new(),
        }),
        corpus.space(),
    )
    .unwrap();
    c.bench_function("mock_run_100_queries", |b| {
        b.iter_batched(
            || config.clone(),
            |cfg| run(&corpus, &cfg, &gateway).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_metrics, bench_stats, bench_engine);
criterion_main!(benches);
