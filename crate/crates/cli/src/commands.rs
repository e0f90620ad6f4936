use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use reefnet_core::cnn::{load_model, predict, save_model, train, EpochRecord, NetworkSpec, Sample};
use reefnet_core::dataset::{
    balance_and_split, build_samples, ingest, read_manifest, write_manifest, AnnotatedPoint, ClassCatalog,
    DirImageSource, ImageSource, SampleBuilder, Split,
};
use reefnet_core::eval::{metrics, save_heatmap, write_confusion, write_report, ConfusionMatrix, MetricsReport};
use reefnet_core::features::{phase_congruency, wld, zca_whiten, FeatureSource, WldEmit};
use reefnet_core::io::{load_png, save_grid, save_png_scaled};
use reefnet_core::preprocess::{enhance, EnhancementSpec, PreprocessError};
use reefnet_core::{Exec, ImageGrid};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::synth::write_dataset;

pub const MANIFEST: &str = "manifest.csv";
pub const CATALOG: &str = "catalog.txt";
pub const MODEL: &str = "model.rnet";
pub const HISTORY: &str = "history.csv";
pub const REPORT: &str = "report.csv";
pub const CONFUSION: &str = "confusion.csv";
pub const HEATMAP: &str = "confusion.png";
pub const PREDICTIONS: &str = "predictions.csv";
pub const RUN_LOG: &str = "run.log";
pub const CONFIG_COPY: &str = "config.txt";

/// Shared state for one subcommand invocation.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub exec: Exec,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn open(path: &Path) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|e| io_err(path, e))
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Creates the output directory, records the effective configuration and
    /// appends the command header to the run log.
    fn begin(&self, command: &str) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))?;
        let cfg_path = self.path(CONFIG_COPY);
        fs::write(&cfg_path, self.config.to_text()).map_err(|e| io_err(&cfg_path, e))?;
        self.log(&format!(
            "{command}: seed.split={} seed.init={} seed.shuffle={} parallel={}",
            self.config.split.seed,
            self.config.train.init_seed,
            self.config.train.shuffle_seed,
            self.exec.is_parallel()
        ))
    }

    fn log(&self, line: &str) -> Result<(), CliError> {
        let path = self.path(RUN_LOG);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
        log::info!("{line}");
        Ok(())
    }

    fn annotations(&self) -> PathBuf {
        self.config
            .annotations
            .clone()
            .unwrap_or_else(|| self.path("annotations.csv"))
    }

    fn images(&self) -> PathBuf {
        self.config.images.clone().unwrap_or_else(|| self.path("images"))
    }

    fn catalog(&self) -> Result<ClassCatalog, CliError> {
        let path = self.path(CATALOG);
        ClassCatalog::read_from(open(&path)?).map_err(|e| CliError::from(e).context(path.display()))
    }

    fn split(&self) -> Result<Split, CliError> {
        let path = self.path(MANIFEST);
        read_manifest(open(&path)?).map_err(|e| CliError::from(e).context(path.display()))
    }

    fn model_path(&self, model: Option<&Path>) -> PathBuf {
        model.map_or_else(|| self.path(MODEL), Path::to_path_buf)
    }
}

pub fn cmd_synth(ctx: &Context, dir: Option<&Path>) -> Result<(), CliError> {
    let dir = dir.map_or_else(|| ctx.out.clone(), Path::to_path_buf);
    ctx.begin("synth")?;
    let spec = ctx.config.synth;
    let rows = write_dataset(&dir, &spec)?;
    ctx.log(&format!(
        "synth: {} images, {rows} annotation rows, synth.seed={} -> {}",
        spec.images,
        spec.seed,
        dir.display()
    ))?;
    println!("wrote {rows} annotation rows for {} images to {}", spec.images, dir.display());
    Ok(())
}

pub fn cmd_ingest(ctx: &Context) -> Result<(), CliError> {
    ctx.begin("ingest")?;
    let ann = ctx.annotations();
    let (points, catalog) = ingest(&ann, &ctx.images()).map_err(|e| CliError::from(e).context(ann.display()))?;
    let split = balance_and_split(&points, &catalog, &ctx.config.split, ctx.config.patch.sizes.len())?;
    let manifest = ctx.path(MANIFEST);
    let mut w = create(&manifest)?;
    write_manifest(&mut w, &split)?;
    w.flush().map_err(|e| io_err(&manifest, e))?;
    let cat_path = ctx.path(CATALOG);
    let mut w = create(&cat_path)?;
    catalog
        .write_to(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&cat_path, e))?;

    println!("{:<24} {:>6} {:>6} {:>6}", "class", "points", "train", "test");
    for name in catalog.names() {
        let count = |v: &[AnnotatedPoint]| v.iter().filter(|p| &p.label == name).count();
        let all = count(&points);
        let (tr, te) = (count(&split.train), count(&split.test));
        println!("{name:<24} {all:>6} {tr:>6} {te:>6}");
        ctx.log(&format!("ingest: {name} points={all} train={tr} test={te}"))?;
    }
    Ok(())
}

/// Expands points into one sample per hybrid patch, in stream order.
fn load_samples<S: ImageSource>(
    points: &[AnnotatedPoint],
    catalog: &ClassCatalog,
    source: &S,
    builder: &SampleBuilder,
    exec: Exec,
) -> Result<Vec<Sample>, CliError> {
    let mut samples = Vec::new();
    for stack in build_samples(points, catalog, source, builder, exec)? {
        let stack = stack?;
        let label = stack.label;
        samples.extend(stack.patches.into_iter().map(|input| Sample { input, label }));
    }
    Ok(samples)
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut text = String::from("epoch,train_error,test_error,learning_rate,loss\n");
    for r in history {
        text.push_str(&format!(
            "{},{:.6},{},{:.6},{:.6}\n",
            r.epoch,
            r.train_error,
            r.test_error.map_or(String::new(), |e| format!("{e:.6}")),
            r.learning_rate,
            r.loss
        ));
    }
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

pub fn cmd_train(ctx: &Context) -> Result<(), CliError> {
    ctx.begin("train")?;
    let started = Instant::now();
    let catalog = ctx.catalog()?;
    let split = ctx.split()?;
    let spec = ctx.config.network_spec(catalog.len());
    spec.plan()?;
    ctx.log(&format!("train: network {}", spec.describe()))?;
    let builder = SampleBuilder::new(ctx.config.sample_config()?)?;
    let source = DirImageSource { root: ctx.images() };
    let train_set = load_samples(&split.train, &catalog, &source, &builder, ctx.exec)?;
    let test_set = load_samples(&split.test, &catalog, &source, &builder, ctx.exec)?;
    ctx.log(&format!(
        "train: {} training samples, {} test samples",
        train_set.len(),
        test_set.len()
    ))?;
    let outcome = train(&train_set, &test_set, &spec, &ctx.config.train, ctx.exec)?;
    save_model(&ctx.path(MODEL), &spec, &outcome.state)?;
    write_history(&ctx.path(HISTORY), &outcome.history)?;
    let last = outcome.history.last().expect("at least one epoch");
    let oa = last.test_error.map(|e| 1.0 - e);
    ctx.log(&format!(
        "train: {} epochs in {:.1}s, final train_error={:.4} test OA={}",
        outcome.history.len(),
        started.elapsed().as_secs_f64(),
        last.train_error,
        oa.map_or("-".into(), |v| format!("{v:.4}"))
    ))?;
    match oa {
        Some(v) => println!("test OA after {} epochs: {v:.4}", outcome.history.len()),
        None => println!("trained {} epochs (empty test fold)", outcome.history.len()),
    }
    Ok(())
}

/// Errors unless the model's layout equals the one implied by the config.
fn check_model(model: &NetworkSpec, expected: &NetworkSpec) -> Result<(), CliError> {
    if model != expected {
        return Err(CliError::config(format!(
            "shape mismatch: model is {} but the configuration implies {}",
            model.describe(),
            expected.describe()
        )));
    }
    Ok(())
}

/// Which manifest fold to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FoldArg {
    Train,
    Test,
}

pub fn evaluate(ctx: &Context, model: Option<&Path>, fold: FoldArg) -> Result<MetricsReport, CliError> {
    let catalog = ctx.catalog()?;
    let split = ctx.split()?;
    let (spec, state) = load_model(&ctx.model_path(model))?;
    check_model(&spec, &ctx.config.network_spec(catalog.len()))?;
    let builder = SampleBuilder::new(ctx.config.sample_config()?)?;
    let source = DirImageSource { root: ctx.images() };
    let points = match fold {
        FoldArg::Train => &split.train,
        FoldArg::Test => &split.test,
    };
    let samples = load_samples(points, &catalog, &source, &builder, ctx.exec)?;
    let predicted = ctx.exec.map(&samples, |s| predict(&s.input, &spec, &state).map(|(c, _)| c));
    let mut cm = ConfusionMatrix::new(catalog);
    for (p, s) in predicted.into_iter().zip(&samples) {
        cm.add(s.label, p?)?;
    }
    let report = metrics(&cm)?;
    let mut w = create(&ctx.path(REPORT))?;
    write_report(&mut w, &report)?;
    w.flush()?;
    let mut w = create(&ctx.path(CONFUSION))?;
    write_confusion(&mut w, &cm)?;
    w.flush()?;
    save_heatmap(&ctx.path(HEATMAP), &cm)?;
    Ok(report)
}

pub fn cmd_eval(ctx: &Context, model: Option<&Path>, fold: FoldArg) -> Result<(), CliError> {
    ctx.begin("eval")?;
    let report = evaluate(ctx, model, fold)?;
    println!("{:<24} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f_score");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for c in &report.per_class {
        println!(
            "{:<24} {:>9} {:>9} {:>9}",
            c.name,
            fmt(c.precision),
            fmt(c.recall),
            fmt(c.f_score)
        );
    }
    println!("overall accuracy: {:.4} over {} samples", report.overall_accuracy, report.total);
    ctx.log(&format!(
        "eval: fold={fold:?} samples={} OA={:.6}",
        report.total, report.overall_accuracy
    ))
}

/// Parses `row,col` lines; a leading `row,col` header is skipped.
pub fn read_locations(path: &Path) -> Result<Vec<(usize, usize)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.replace(' ', "") == "row,col") {
            continue;
        }
        out.push(parse_location(line).map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn parse_location(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected ROW,COL, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(r)?, num(c)?))
}

/// Classifies points of one image by averaging class scores over the
/// point's hybrid patches.
pub fn cmd_predict(
    ctx: &Context,
    model: Option<&Path>,
    image: &Path,
    mut locations: Vec<(usize, usize)>,
    points_file: Option<&Path>,
) -> Result<(), CliError> {
    ctx.begin("predict")?;
    if let Some(p) = points_file {
        locations.extend(read_locations(p)?);
    }
    if locations.is_empty() {
        return Err(CliError::config("no points to classify; pass --at ROW,COL or --points FILE"));
    }
    let catalog = ctx.catalog()?;
    let (spec, state) = load_model(&ctx.model_path(model))?;
    check_model(&spec, &ctx.config.network_spec(catalog.len()))?;
    let builder = SampleBuilder::new(ctx.config.sample_config()?)?;
    let (enhanced, raw) = builder.prepare_image(load_png(image)?)?;
    let id = image.display().to_string();
    let results = ctx.exec.map(&locations, |&(row, col)| -> Result<(usize, f64), CliError> {
        let point = AnnotatedPoint {
            image_id: id.clone(),
            row,
            col,
            label: String::new(),
        };
        let stack = builder.build(&enhanced, raw.as_ref(), &point, 0)?;
        let mut mean = vec![0.0; spec.classes];
        for patch in &stack.patches {
            let (_, scores) = predict(patch, &spec, &state)?;
            for (m, s) in mean.iter_mut().zip(scores) {
                *m += s / stack.patches.len() as f64;
            }
        }
        let best = reefnet_core::cnn::argmax(&mean);
        Ok((best, mean[best]))
    });
    let mut text = String::from("image,row,col,label,score\n");
    for (&(row, col), r) in locations.iter().zip(results) {
        let (class, score) = r?;
        text.push_str(&format!("{id},{row},{col},{},{score:.6}\n", catalog.names()[class]));
    }
    print!("{text}");
    let path = ctx.path(PREDICTIONS);
    fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
    ctx.log(&format!("predict: {} points of {id}", locations.len()))
}

/// Writes ZCA, WLD and phase congruency maps of `image` as PNGs and raw
/// grids. Output goes to `out`, or next to the input when `out` is `None`.
pub fn cmd_features(config: &RunConfig, image: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let raw = load_png(image)?;
    let source = match config.features.source {
        FeatureSource::Raw => raw,
        FeatureSource::Enhanced => match enhance(&raw, &config.enhancement) {
            Ok(img) => img,
            Err(PreprocessError::DegenerateHistogram { .. }) => {
                log::warn!("{}: flat histogram, computing features on the raw image", image.display());
                enhance(&raw, &EnhancementSpec::none())?
            }
            Err(e) => return Err(e.into()),
        },
    };
    let gray = source.to_gray().map(|v| v / 255.0);
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => image.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let stem = image
        .file_stem()
        .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());

    let mut maps: Vec<(String, ImageGrid)> = vec![("zca".into(), zca_whiten(&gray, &config.features.zca)?)];
    let w = wld(&gray, &config.features.wld)?;
    match config.features.wld.emit {
        WldEmit::Both => {
            maps.push(("wld_excitation".into(), w.channel(0)));
            maps.push(("wld_orientation".into(), w.channel(1)));
        }
        _ => maps.push(("wld".into(), w)),
    }
    maps.push(("pc".into(), phase_congruency(&gray, &config.features.pc)?));

    let mut written = Vec::new();
    for (name, map) in maps {
        let png = dir.join(format!("{stem}_{name}.png"));
        save_png_scaled(&png, &map, 0.0, 1.0)?;
        save_grid(&dir.join(format!("{stem}_{name}.rgrd")), &map)?;
        written.push(png);
    }
    Ok(written)
}
