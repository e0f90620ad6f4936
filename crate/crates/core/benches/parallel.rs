use std::collections::HashMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use reefnet_core::cnn::{batch_gradient, init_network, ActivationSpec, NetworkSpec, Sample};
use reefnet_core::dataset::{build_samples, AnnotatedPoint, ClassCatalog, SampleBuilder, SampleConfig};
use reefnet_core::features::{FeatureConfig, FeatureFlags};
use reefnet_core::{Exec, ImageGrid};

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn textured(side: usize, channels: usize, seed: usize) -> ImageGrid {
    ImageGrid::from_fn(side, side, channels, |y, x, c| {
        let v = ((y * 31 + x * 17 + c * 7 + seed * 13) % 97) as f64 / 48.5 - 1.0;
        v * (1.0 + ((x + seed) % 5) as f64 / 10.0) / 1.5
    })
}

fn batch_gradients(c: &mut Criterion) {
    let spec = NetworkSpec::from_stages(61, 3, &[(6, 6, 2), (12, 5, 2)], 3, ActivationSpec::default());
    let state = init_network(&spec, 1).unwrap();
    let samples: Vec<Sample> = (0..12)
        .map(|i| Sample {
            input: textured(61, 3, i),
            label: i % 3,
        })
        .collect();
    let batch: Vec<usize> = (0..samples.len()).collect();
    let mut group = c.benchmark_group("batch_gradient_12x61");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(batch_gradient(&samples, &batch, &spec, &state, exec).unwrap()))
        });
    }
    group.finish();
}

fn patch_features(c: &mut Criterion) {
    let mut images = HashMap::new();
    images.insert("tile".to_string(), textured(256, 3, 0).map(|v| (v + 1.0) * 127.5));
    let points: Vec<AnnotatedPoint> = (0..16)
        .map(|i| AnnotatedPoint {
            image_id: "tile".into(),
            row: 20 + 13 * i,
            col: 230 - 12 * i,
            label: "a".into(),
        })
        .collect();
    let catalog = ClassCatalog::from_points(&points);
    let builder = SampleBuilder::new(SampleConfig {
        features: FeatureConfig {
            flags: FeatureFlags::all(),
            ..FeatureConfig::default()
        },
        ..SampleConfig::default()
    })
    .unwrap();
    let mut group = c.benchmark_group("hybrid_patches_features_16pts");
    group.sample_size(10);
    for (name, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let stacks: Vec<_> = build_samples(&points, &catalog, &images, &builder, exec)
                    .unwrap()
                    .collect::<Result<_, _>>()
                    .unwrap();
                black_box(stacks)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, patch_features);
criterion_main!(benches);
