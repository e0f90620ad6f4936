use std::collections::HashMap;

use reefnet_core::cnn::{load_model, predict, save_model, train, ActivationSpec, NetworkSpec, Sample, TrainConfig};
use reefnet_core::dataset::{
    balance_and_split, build_samples, read_manifest, write_manifest, AnnotatedPoint, ClassCatalog, SampleBuilder,
    SampleConfig, SplitSpec,
};
use reefnet_core::features::FeatureFlags;
use reefnet_core::preprocess::HybridPatchSpec;
use reefnet_core::{Exec, ImageGrid};

fn images() -> HashMap<String, ImageGrid> {
    let mut map = HashMap::new();
    for k in 0..2 {
        let img = ImageGrid::from_fn(64, 64, 3, |y, x, c| {
            if x < 32 {
                40.0 + 10.0 * c as f64 + ((y * 7 + x * 3 + k) % 5) as f64
            } else if (y / 3 + x / 3) % 2 == 0 {
                220.0
            } else {
                30.0
            }
        });
        map.insert(format!("img{k}.png"), img);
    }
    map
}

fn points() -> Vec<AnnotatedPoint> {
    let mut pts = Vec::new();
    for k in 0..2 {
        for i in 0..6 {
            let row = 8 + 8 * i;
            for (col, label) in [(12, "flat"), (48, "checker")] {
                pts.push(AnnotatedPoint {
                    image_id: format!("img{k}.png"),
                    row,
                    col,
                    label: label.into(),
                });
            }
        }
    }
    pts
}

fn config() -> SampleConfig {
    let mut cfg = SampleConfig {
        patch: HybridPatchSpec {
            sizes: vec![9, 17],
            ..HybridPatchSpec::default()
        },
        ..SampleConfig::default()
    };
    cfg.features.flags = FeatureFlags::all();
    cfg
}

fn samples(points: &[AnnotatedPoint], catalog: &ClassCatalog, exec: Exec) -> Vec<Sample> {
    let source = images();
    let builder = SampleBuilder::new(config()).unwrap();
    build_samples(points, catalog, &source, &builder, exec)
        .unwrap()
        .flat_map(|stack| {
            let stack = stack.unwrap();
            stack
                .patches
                .into_iter()
                .map(move |input| Sample { input, label: stack.label })
        })
        .collect()
}

#[test]
fn split_build_train_and_reload() {
    let pts = points();
    let catalog = ClassCatalog::from_points(&pts);
    let split = balance_and_split(&pts, &catalog, &SplitSpec::default(), 1).unwrap();
    assert_eq!((split.train.len(), split.test.len()), (16, 8));

    let mut manifest = Vec::new();
    write_manifest(&mut manifest, &split).unwrap();
    let reread = read_manifest(manifest.as_slice()).unwrap();
    assert_eq!(reread.train, split.train);
    assert_eq!(reread.test, split.test);

    let train_set = samples(&split.train, &catalog, Exec::Parallel);
    let test_set = samples(&split.test, &catalog, Exec::Parallel);
    assert_eq!(train_set.len(), 32);
    assert_eq!(train_set[0].input.shape(), (9, 9, config().channels()));
    assert_eq!(train_set, samples(&split.train, &catalog, Exec::Sequential));

    let spec = NetworkSpec::from_stages(9, 6, &[(4, 2, 2)], 2, ActivationSpec::default());
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let par = train(&train_set, &test_set, &spec, &cfg, Exec::Parallel).unwrap();
    let seq = train(&train_set, &test_set, &spec, &cfg, Exec::Sequential).unwrap();
    assert_eq!(par, seq);
    assert_eq!(par.history.len(), 4);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rnet");
    save_model(&path, &spec, &par.state).unwrap();
    let (spec2, state2) = load_model(&path).unwrap();
    assert_eq!(spec2, spec);
    for s in &test_set {
        assert_eq!(
            predict(&s.input, &spec, &par.state).unwrap(),
            predict(&s.input, &spec2, &state2).unwrap()
        );
    }
}
