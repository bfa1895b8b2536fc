//! Throughput benchmarks for the data-parallel stages. Run with the
//! default features for the rayon path, or with
//! `--no-default-features` for the sequential fallback:
//!
//!   cargo bench -p bandboost-core
//!   cargo bench -p bandboost-core --no-default-features

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use bandboost_core::dsp::{self, PipelineConfig};
use bandboost_core::features::{
    build_feature_table, region_band_features, standard_bands, standard_regions,
};
use bandboost_core::gbt::{self, GbtParams};
use bandboost_core::synthgen::{synth_cohort, uniform_band_power, BandPowerMap, ClassSpec, CohortSpec};

fn bench_spec(count: usize, seed: u64) -> CohortSpec {
    CohortSpec {
        dataset_id: "bench".into(),
        classes: vec![
            ClassSpec {
                label: 0,
                name: "a".into(),
                count,
                band_power: uniform_band_power(&[
                    ("delta", 20.0),
                    ("theta", 10.0),
                    ("alpha", 15.0),
                    ("beta", 5.0),
                    ("gamma", 2.0),
                ]),
                stress_fraction: 0.0,
            },
            ClassSpec {
                label: 1,
                name: "b".into(),
                count,
                band_power: uniform_band_power(&[
                    ("delta", 18.0),
                    ("theta", 11.0),
                    ("alpha", 12.0),
                    ("beta", 7.0),
                    ("gamma", 3.0),
                ]),
                stress_fraction: 0.0,
            },
        ],
        duration_s: 30.0,
        sample_rate_hz: 200.0,
        seed,
        stress_offset: BandPowerMap::new(),
        subject_jitter: 0.05,
        background_db: -20.0,
    }
}

fn bench_standardize(c: &mut Criterion) {
    let spec = bench_spec(1, 5);
    let rec =
        bandboost_core::synthgen::synth_recording(&spec, &spec.classes[0], "s0", 17, false)
            .unwrap();
    let config = PipelineConfig::default();
    c.bench_function("standardize_30s_14ch", |b| {
        b.iter(|| dsp::standardize(&rec, &config).unwrap())
    });
}

fn bench_featurize(c: &mut Criterion) {
    let spec = bench_spec(1, 5);
    let rec =
        bandboost_core::synthgen::synth_recording(&spec, &spec.classes[0], "s0", 17, false)
            .unwrap();
    let config = PipelineConfig::default();
    let conditioned = dsp::standardize(&rec, &config).unwrap();
    let epochs = dsp::epoch(&conditioned, 6.0, 0.0).unwrap();
    let regions = standard_regions();
    let bands = standard_bands();
    c.bench_function("featurize_epochs", |b| {
        b.iter(|| {
            epochs
                .iter()
                .map(|ep| {
                    region_band_features(ep, &conditioned.channel_labels, &regions, &bands, 4.0)
                        .unwrap()
                })
                .collect::<Vec<_>>()
        })
    });
}

fn bench_cohort_features(c: &mut Criterion) {
    let spec = bench_spec(4, 5);
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_cohort(&spec, dir.path()).unwrap();
    let config = PipelineConfig::default();
    c.bench_function("cohort_feature_table_8_subjects", |b| {
        b.iter(|| build_feature_table(&manifest, &config).unwrap())
    });
}

fn bench_train(c: &mut Criterion) {
    let spec = bench_spec(6, 5);
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_cohort(&spec, dir.path()).unwrap();
    let table = build_feature_table(&manifest, &PipelineConfig::default()).unwrap();
    let x = table.values_matrix();
    let y = table.labels();
    let params = GbtParams {
        n_rounds: 40,
        learning_rate: 0.3,
        max_depth: 3,
        min_child_weight: 0.0,
        early_stopping_rounds: None,
        ..GbtParams::default()
    };
    c.bench_function("gbt_train_40_rounds", |b| {
        b.iter_batched(
            || (x.clone(), y.clone()),
            |(x, y)| gbt::train(&x, &y, &params, None).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_standardize, bench_featurize, bench_cohort_features, bench_train
}
criterion_main!(benches);
