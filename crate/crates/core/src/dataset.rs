//! Point-annotation ingestion, class balancing, stratified splitting and
//! sample streaming.
//!
//! Annotation files are UTF-8 CSV with header `image,row,col,label` and
//! 0-indexed pixel coordinates. Split manifests add a `fold` column
//! (`train` or `test`). Catalog files hold one class name per line; the line
//! number is the class id.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::Exec;
use crate::features::{FeatureConfig, FeatureError, FeatureExtractor, FeatureSource};
use crate::grid::{normalize_or_fill, ImageGrid, NormalizationSpec};
use crate::io::{load_png, png_dimensions, IoError};
use crate::preprocess::{
    enhance, hybrid_patches, EnhancementSpec, HybridPatchSpec, PatchStack, PreprocessError,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("missing image {path}")]
    MissingImage { path: String },
    #[error("point ({row}, {col}) lies outside image {image_id}")]
    PointOutOfBounds { image_id: String, row: i64, col: i64 },
    #[error("class {0} has no points")]
    EmptyClass(String),
    #[error("class {class} has {count} points; at least 3 are needed to split")]
    TooFewPoints { class: String, count: usize },
    #[error("label {0} is not in the class catalog")]
    UnknownLabel(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(IoError::Io(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnnotatedPoint {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub label: String,
}

impl AnnotatedPoint {
    fn location(&self) -> (&str, usize, usize) {
        (&self.image_id, self.row, self.col)
    }
}

/// Ordered class names; position is the class id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>) -> Result<Self, DatasetError> {
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(DatasetError::InvalidSplit("duplicate class names in catalog".into()));
        }
        Ok(Self { names })
    }

    /// Sorted distinct labels.
    pub fn from_points(points: &[AnnotatedPoint]) -> Self {
        let names: BTreeSet<&str> = points.iter().map(|p| p.label.as_str()).collect();
        Self {
            names: names.into_iter().map(String::from).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n == label)
    }

    pub fn id(&self, label: &str) -> Result<usize, DatasetError> {
        self.index_of(label)
            .ok_or_else(|| DatasetError::UnknownLabel(label.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for n in &self.names {
            writeln!(w, "{n}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, DatasetError> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::new(s.lines().filter(|l| !l.is_empty()).map(String::from).collect())
    }
}

fn parse_row(
    record: &csv::StringRecord,
    line: usize,
    with_fold: bool,
) -> Result<(String, i64, i64, String, Option<String>), DatasetError> {
    let want = if with_fold { 5 } else { 4 };
    if record.len() != want {
        return Err(DatasetError::ParseError {
            line,
            message: format!("expected {want} fields, found {}", record.len()),
        });
    }
    let coord = |i: usize, name: &str| {
        record[i]
            .trim()
            .parse::<i64>()
            .map_err(|e| DatasetError::ParseError {
                line,
                message: format!("{name} {:?}: {e}", &record[i]),
            })
    };
    let image = record[0].trim().to_string();
    let label = record[3].trim().to_string();
    if image.is_empty() || label.is_empty() {
        return Err(DatasetError::ParseError {
            line,
            message: "empty image or label".into(),
        });
    }
    let fold = with_fold.then(|| record[4].trim().to_string());
    Ok((image, coord(1, "row")?, coord(2, "col")?, label, fold))
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<(), DatasetError> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(DatasetError::ParseError {
            line: 1,
            message: format!("header {got:?}, expected {expected:?}"),
        });
    }
    Ok(())
}

/// Parses annotation CSV, validating each point against `dims(image_id)`.
pub fn ingest_reader<R: Read>(
    reader: R,
    mut dims: impl FnMut(&str) -> Result<(usize, usize), DatasetError>,
) -> Result<(Vec<AnnotatedPoint>, ClassCatalog), DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut points = Vec::new();
    let mut cache: HashMap<String, (usize, usize)> = HashMap::new();
    let mut header_seen = false;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| DatasetError::ParseError {
            line,
            message: e.to_string(),
        })?;
        if !header_seen {
            check_header(&rec, &["image", "row", "col", "label"])?;
            header_seen = true;
            continue;
        }
        let (image_id, row, col, label, _) = parse_row(&rec, line, false)?;
        let (h, w) = match cache.get(&image_id) {
            Some(&d) => d,
            None => {
                let d = dims(&image_id)?;
                cache.insert(image_id.clone(), d);
                d
            }
        };
        if row < 0 || col < 0 || row as usize >= h || col as usize >= w {
            return Err(DatasetError::PointOutOfBounds { image_id, row, col });
        }
        points.push(AnnotatedPoint {
            image_id,
            row: row as usize,
            col: col as usize,
            label,
        });
    }
    let catalog = ClassCatalog::from_points(&points);
    Ok((points, catalog))
}

pub fn image_path(root: &Path, image_id: &str) -> PathBuf {
    root.join(image_id)
}

/// Reads the annotation CSV and checks every point against its image.
pub fn ingest(
    annotation_file: &Path,
    image_root: &Path,
) -> Result<(Vec<AnnotatedPoint>, ClassCatalog), DatasetError> {
    let f = fs::File::open(annotation_file).map_err(|e| crate::io::file_err(annotation_file, e))?;
    ingest_reader(f, |id| {
        let path = image_path(image_root, id);
        if !path.is_file() {
            return Err(DatasetError::MissingImage {
                path: path.display().to_string(),
            });
        }
        Ok(png_dimensions(&path)?)
    })
}

/// Exact rational train fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self, DatasetError> {
        if den == 0 || num == 0 || num >= den {
            return Err(DatasetError::InvalidSplit(format!(
                "train ratio {num}/{den} must lie strictly between 0 and 1"
            )));
        }
        Ok(Self { num, den })
    }

    /// `round(n * num / den)` with halves rounded up.
    pub fn round_mul(&self, n: usize) -> usize {
        ((2 * n as u64 * self.num + self.den) / (2 * self.den)) as usize
    }
}

impl Default for Ratio {
    fn default() -> Self {
        Self { num: 2, den: 3 }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = DatasetError;

    /// Accepts `a/b` or a decimal such as `0.75`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::InvalidSplit(format!("cannot parse ratio {s:?}"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse().map_err(|_| bad())?;
            let b = b.trim().parse().map_err(|_| bad())?;
            return Ratio::new(a, b);
        }
        let (int, frac) = s.split_once('.').ok_or_else(bad)?;
        if int.trim() != "0" && !int.trim().is_empty() {
            return Err(bad());
        }
        let den = 10u64.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        let num = frac.parse().map_err(|_| bad())?;
        Ratio::new(num, den)
    }
}

/// What the per-class cap counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CapUnit {
    #[default]
    Points,
    /// Hybrid-expanded samples: each point contributes one per patch size.
    Patches,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_ratio: Ratio,
    pub per_class_cap: usize,
    pub cap_unit: CapUnit,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: Ratio::default(),
            per_class_cap: 300,
            cap_unit: CapUnit::Points,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<AnnotatedPoint>,
    pub test: Vec<AnnotatedPoint>,
}

/// Per class: seeded subsample of at most the cap, then a stratified split.
/// Both folds come back sorted by (image, row, col).
pub fn balance_and_split(
    points: &[AnnotatedPoint],
    catalog: &ClassCatalog,
    spec: &SplitSpec,
    patches_per_point: usize,
) -> Result<Split, DatasetError> {
    if spec.per_class_cap == 0 {
        return Err(DatasetError::InvalidSplit("per-class cap must be positive".into()));
    }
    let point_cap = match spec.cap_unit {
        CapUnit::Points => spec.per_class_cap,
        CapUnit::Patches => (spec.per_class_cap / patches_per_point.max(1)).max(1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = Split::default();
    for name in catalog.names() {
        let mut members: Vec<&AnnotatedPoint> = points.iter().filter(|p| &p.label == name).collect();
        if members.is_empty() {
            return Err(DatasetError::EmptyClass(name.clone()));
        }
        if members.len() < 3 {
            return Err(DatasetError::TooFewPoints {
                class: name.clone(),
                count: members.len(),
            });
        }
        members.sort();
        members.shuffle(&mut rng);
        members.truncate(point_cap);
        let n = members.len();
        let n_train = spec.train_ratio.round_mul(n).clamp(1, n.saturating_sub(1).max(1));
        split.train.extend(members[..n_train].iter().map(|p| (*p).clone()));
        split.test.extend(members[n_train..].iter().map(|p| (*p).clone()));
    }
    for p in points {
        if catalog.index_of(&p.label).is_none() {
            return Err(DatasetError::UnknownLabel(p.label.clone()));
        }
    }
    split.train.sort();
    split.test.sort();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fold {
    Train,
    Test,
}

impl Fold {
    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Test => "test",
        }
    }
}

pub fn write_manifest<W: Write>(w: W, split: &Split) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| DatasetError::Io(IoError::Io(e.into()));
    wtr.write_record(["image", "row", "col", "label", "fold"]).map_err(err)?;
    for (fold, pts) in [(Fold::Train, &split.train), (Fold::Test, &split.test)] {
        for p in pts {
            wtr.write_record([
                p.image_id.as_str(),
                &p.row.to_string(),
                &p.col.to_string(),
                p.label.as_str(),
                fold.as_str(),
            ])
            .map_err(err)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(r: R) -> Result<Split, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(r);
    let mut split = Split::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| DatasetError::ParseError {
            line,
            message: e.to_string(),
        })?;
        if line == 1 {
            check_header(&rec, &["image", "row", "col", "label", "fold"])?;
            continue;
        }
        let (image_id, row, col, label, fold) = parse_row(&rec, line, true)?;
        if row < 0 || col < 0 {
            return Err(DatasetError::PointOutOfBounds { image_id, row, col });
        }
        let p = AnnotatedPoint {
            image_id,
            row: row as usize,
            col: col as usize,
            label,
        };
        match fold.as_deref() {
            Some("train") => split.train.push(p),
            Some("test") => split.test.push(p),
            other => {
                return Err(DatasetError::ParseError {
                    line,
                    message: format!("unknown fold {other:?}"),
                })
            }
        }
    }
    Ok(split)
}

/// Supplies decoded images by id.
pub trait ImageSource: Sync {
    fn load(&self, image_id: &str) -> Result<ImageGrid, DatasetError>;
}

/// PNG files below a root directory.
#[derive(Debug, Clone)]
pub struct DirImageSource {
    pub root: PathBuf,
}

impl ImageSource for DirImageSource {
    fn load(&self, image_id: &str) -> Result<ImageGrid, DatasetError> {
        let path = image_path(&self.root, image_id);
        if !path.is_file() {
            return Err(DatasetError::MissingImage {
                path: path.display().to_string(),
            });
        }
        Ok(load_png(&path)?)
    }
}

impl ImageSource for HashMap<String, ImageGrid> {
    fn load(&self, image_id: &str) -> Result<ImageGrid, DatasetError> {
        self.get(image_id).cloned().ok_or_else(|| DatasetError::MissingImage {
            path: image_id.to_string(),
        })
    }
}

/// Everything needed to turn an annotated point into network inputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleConfig {
    pub patch: HybridPatchSpec,
    pub enhancement: EnhancementSpec,
    pub features: FeatureConfig,
    pub normalization: NormalizationSpec,
}

impl SampleConfig {
    /// Network input channels: three colour channels plus the feature maps.
    pub fn channels(&self) -> usize {
        3 + self.features.channel_count()
    }
}

/// Builds patch stacks: colour channels from the enhanced image, then the
/// enabled feature maps, everything normalized per channel.
#[derive(Debug)]
pub struct SampleBuilder {
    config: SampleConfig,
    extractor: Option<FeatureExtractor>,
}

impl SampleBuilder {
    pub fn new(config: SampleConfig) -> Result<Self, DatasetError> {
        config.patch.validate()?;
        let extractor = if config.features.flags.any() {
            Some(FeatureExtractor::new(config.features, config.patch.unified_size())?)
        } else {
            None
        };
        Ok(Self { config, extractor })
    }

    pub fn config(&self) -> &SampleConfig {
        &self.config
    }

    /// Prepares the per-image inputs: (enhanced, raw if features need it).
    /// Single-channel images are replicated to three colour channels.
    pub fn prepare_image(&self, raw: ImageGrid) -> Result<(ImageGrid, Option<ImageGrid>), DatasetError> {
        let raw = if raw.channels() == 1 {
            ImageGrid::stack_channels(&[raw.clone(), raw.clone(), raw])
        } else {
            raw
        };
        let enhanced = enhance(&raw, &self.config.enhancement)?;
        let keep_raw = self.extractor.is_some() && self.config.features.source == FeatureSource::Raw;
        Ok((enhanced, keep_raw.then_some(raw)))
    }

    pub fn build(
        &self,
        enhanced: &ImageGrid,
        raw: Option<&ImageGrid>,
        point: &AnnotatedPoint,
        label: usize,
    ) -> Result<PatchStack, DatasetError> {
        let colour = hybrid_patches(enhanced, point.row, point.col, &self.config.patch)?;
        let feature_src = match (&self.extractor, raw) {
            (Some(_), Some(r)) => Some(hybrid_patches(r, point.row, point.col, &self.config.patch)?),
            _ => None,
        };
        let mut patches = Vec::with_capacity(colour.len());
        for (k, patch) in colour.into_iter().enumerate() {
            let stacked = match &self.extractor {
                Some(ex) => {
                    let src = feature_src.as_ref().map_or(&patch, |f| &f[k]);
                    let gray = src.to_gray().map(|v| v / 255.0);
                    let mut parts = vec![patch];
                    parts.extend(ex.extract(&gray)?);
                    ImageGrid::stack_channels(&parts)
                }
                None => patch,
            };
            patches.push(normalize_or_fill(&stacked, &self.config.normalization));
        }
        Ok(PatchStack {
            point: point.clone(),
            patches,
            label,
        })
    }
}

/// Lazily yields one [`PatchStack`] per point in (image, row, col) order.
/// Each image is decoded once; its points are expanded on `exec` and
/// returned in order.
pub struct SampleStream<'a, S: ImageSource> {
    points: Vec<(AnnotatedPoint, usize)>,
    next: usize,
    buffer: std::vec::IntoIter<Result<PatchStack, DatasetError>>,
    source: &'a S,
    builder: &'a SampleBuilder,
    exec: Exec,
}

impl<S: ImageSource> Iterator for SampleStream<'_, S> {
    type Item = Result<PatchStack, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(item) = self.buffer.next() {
            return Some(item);
        }
        if self.next >= self.points.len() {
            return None;
        }
        let start = self.next;
        let image_id = self.points[start].0.image_id.clone();
        let end = start
            + self.points[start..]
                .iter()
                .take_while(|(p, _)| p.image_id == image_id)
                .count();
        self.next = end;
        let prepared = self
            .source
            .load(&image_id)
            .and_then(|img| self.builder.prepare_image(img));
        let (enhanced, raw) = match prepared {
            Ok(v) => v,
            Err(e) => {
                self.next = self.points.len();
                return Some(Err(e));
            }
        };
        let builder = self.builder;
        let chunk = &self.points[start..end];
        let results = self
            .exec
            .map(chunk, |(p, label)| builder.build(&enhanced, raw.as_ref(), p, *label));
        self.buffer = results.into_iter();
        self.buffer.next()
    }
}

pub fn build_samples<'a, S: ImageSource>(
    points: &[AnnotatedPoint],
    catalog: &ClassCatalog,
    source: &'a S,
    builder: &'a SampleBuilder,
    exec: Exec,
) -> Result<SampleStream<'a, S>, DatasetError> {
    let mut labelled = points
        .iter()
        .map(|p| Ok((p.clone(), catalog.id(&p.label)?)))
        .collect::<Result<Vec<_>, DatasetError>>()?;
    labelled.sort_by(|a, b| a.0.location().cmp(&b.0.location()));
    Ok(SampleStream {
        points: labelled,
        next: 0,
        buffer: Vec::new().into_iter(),
        source,
        builder,
        exec,
    })
}
