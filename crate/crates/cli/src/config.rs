//! Flat `section.key = value` run configuration.
//!
//! Every key has a default taken from the library types. A config file and
//! `--section.key value` flags are applied on top, in that order. The
//! effective configuration is written back out in the same format.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use reefnet_core::cnn::{ActivationSpec, NetworkSpec, TrainConfig};
use reefnet_core::dataset::{CapUnit, Ratio, SampleConfig, SplitSpec};
use reefnet_core::features::{FeatureConfig, FeatureSource, WldEmit};
use reefnet_core::grid::{InterpolationKind, NormalizationKind, NormalizationSpec};
use reefnet_core::preprocess::{EnhancementKind, EnhancementSpec, HybridPatchSpec, PreprocessError, UnifyMode};

use crate::error::CliError;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Annotation CSV; `None` means `<out>/annotations.csv`.
    pub annotations: Option<PathBuf>,
    /// Image directory; `None` means `<out>/images`.
    pub images: Option<PathBuf>,
    pub enhancement: EnhancementSpec,
    pub patch: HybridPatchSpec,
    pub features: FeatureConfig,
    pub norm_kind: NormalizationKind,
    pub norm_min: f64,
    pub norm_max: f64,
    pub maps: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pools: Vec<usize>,
    pub beta: f64,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let norm = NormalizationSpec::default();
        Self {
            annotations: None,
            images: None,
            enhancement: EnhancementSpec::default(),
            patch: HybridPatchSpec::default(),
            features: FeatureConfig::default(),
            norm_kind: norm.kind,
            norm_min: norm.out_min,
            norm_max: norm.out_max,
            maps: vec![6, 12, 12],
            kernels: vec![6, 5, 5],
            pools: vec![2, 2, 2],
            beta: ActivationSpec::default().beta,
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            synth: SynthSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::config(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_choice<T: Copy>(key: &str, value: &str, choices: &[(&str, T)]) -> Result<T, CliError> {
    let v = value.trim();
    choices
        .iter()
        .find(|(name, _)| *name == v)
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
            CliError::config(format!("{key} = {value:?}: expected one of {}", names.join(", ")))
        })
}

fn choice_name<T: PartialEq>(value: T, choices: &[(&'static str, T)]) -> &'static str {
    choices
        .iter()
        .find(|(_, t)| *t == value)
        .map(|(n, _)| *n)
        .expect("every variant has a name")
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

const ENHANCE: &[(&str, EnhancementKind)] = &[
    ("none", EnhancementKind::None),
    ("stretch", EnhancementKind::PercentileStretch),
    ("bazeille", EnhancementKind::Bazeille),
    ("iqbal", EnhancementKind::Iqbal),
];
const UNIFY: &[(&str, UnifyMode)] = &[("down", UnifyMode::DownScale), ("up", UnifyMode::UpScale)];
const INTERP: &[(&str, InterpolationKind)] = &[
    ("nearest", InterpolationKind::Nearest),
    ("bilinear", InterpolationKind::Bilinear),
    ("bicubic", InterpolationKind::Bicubic),
];
const SOURCE: &[(&str, FeatureSource)] = &[("enhanced", FeatureSource::Enhanced), ("raw", FeatureSource::Raw)];
const EMIT: &[(&str, WldEmit)] = &[
    ("excitation", WldEmit::Excitation),
    ("orientation", WldEmit::Orientation),
    ("both", WldEmit::Both),
];
const NORM: &[(&str, NormalizationKind)] = &[("minmax", NormalizationKind::MinMax), ("zscore", NormalizationKind::ZScore)];
const CAP_UNIT: &[(&str, CapUnit)] = &[("points", CapUnit::Points), ("patches", CapUnit::Patches)];

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let path = |v: &str| (!v.trim().is_empty()).then(|| PathBuf::from(v.trim()));
        match key {
            "paths.annotations" => self.annotations = path(value),
            "paths.images" => self.images = path(value),
            "enhance.kind" => self.enhancement.kind = parse_choice(key, value, ENHANCE)?,
            "enhance.low_pct" => self.enhancement.low_pct = parse(key, value)?,
            "enhance.high_pct" => self.enhancement.high_pct = parse(key, value)?,
            "patch.sizes" => self.patch.sizes = parse_list(key, value)?,
            "patch.unify" => self.patch.unify = parse_choice(key, value, UNIFY)?,
            "patch.interp" => self.patch.interp = parse_choice(key, value, INTERP)?,
            "features.zca" => self.features.flags.zca = parse_bool(key, value)?,
            "features.wld" => self.features.flags.wld = parse_bool(key, value)?,
            "features.pc" => self.features.flags.pc = parse_bool(key, value)?,
            "features.source" => self.features.source = parse_choice(key, value, SOURCE)?,
            "zca.epsilon" => self.features.zca.epsilon = parse(key, value)?,
            "wld.alpha" => self.features.wld.alpha = parse(key, value)?,
            "wld.delta" => self.features.wld.delta = parse(key, value)?,
            "wld.emit" => self.features.wld.emit = parse_choice(key, value, EMIT)?,
            "pc.scales" => self.features.pc.scales = parse(key, value)?,
            "pc.orientations" => self.features.pc.orientations = parse(key, value)?,
            "pc.min_wavelength" => self.features.pc.min_wavelength = parse(key, value)?,
            "pc.mult" => self.features.pc.mult = parse(key, value)?,
            "pc.sigma_on_f" => self.features.pc.sigma_on_f = parse(key, value)?,
            "pc.k" => self.features.pc.noise_k = parse(key, value)?,
            "pc.epsilon" => self.features.pc.epsilon = parse(key, value)?,
            "norm.kind" => self.norm_kind = parse_choice(key, value, NORM)?,
            "norm.min" => self.norm_min = parse(key, value)?,
            "norm.max" => self.norm_max = parse(key, value)?,
            "net.maps" => self.maps = parse_list(key, value)?,
            "net.kernels" => self.kernels = parse_list(key, value)?,
            "net.pools" => self.pools = parse_list(key, value)?,
            "net.beta" => self.beta = parse(key, value)?,
            "train.lr" => self.train.initial_lr = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch" => self.train.batch_size = parse(key, value)?,
            "split.ratio" => self.split.train_ratio = parse::<Ratio>(key, value)?,
            "split.cap" => self.split.per_class_cap = parse(key, value)?,
            "split.cap_unit" => self.split.cap_unit = parse_choice(key, value, CAP_UNIT)?,
            "seed.split" => self.split.seed = parse(key, value)?,
            "seed.init" => self.train.init_seed = parse(key, value)?,
            "seed.shuffle" => self.train.shuffle_seed = parse(key, value)?,
            "synth.seed" => self.synth.seed = parse(key, value)?,
            "synth.images" => self.synth.images = parse(key, value)?,
            "synth.side" => self.synth.side = parse(key, value)?,
            "synth.points" => self.synth.points_per_image = parse(key, value)?,
            "synth.cells" => self.synth.cells = parse(key, value)?,
            "synth.noise" => self.synth.noise_sigma = parse(key, value)?,
            _ => return Err(CliError::config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let f = &self.features;
        vec![
            ("paths.annotations", path(&self.annotations)),
            ("paths.images", path(&self.images)),
            ("enhance.kind", choice_name(self.enhancement.kind, ENHANCE).into()),
            ("enhance.low_pct", self.enhancement.low_pct.to_string()),
            ("enhance.high_pct", self.enhancement.high_pct.to_string()),
            ("patch.sizes", join(&self.patch.sizes)),
            ("patch.unify", choice_name(self.patch.unify, UNIFY).into()),
            ("patch.interp", choice_name(self.patch.interp, INTERP).into()),
            ("features.zca", f.flags.zca.to_string()),
            ("features.wld", f.flags.wld.to_string()),
            ("features.pc", f.flags.pc.to_string()),
            ("features.source", choice_name(f.source, SOURCE).into()),
            ("zca.epsilon", f.zca.epsilon.to_string()),
            ("wld.alpha", f.wld.alpha.to_string()),
            ("wld.delta", f.wld.delta.to_string()),
            ("wld.emit", choice_name(f.wld.emit, EMIT).into()),
            ("pc.scales", f.pc.scales.to_string()),
            ("pc.orientations", f.pc.orientations.to_string()),
            ("pc.min_wavelength", f.pc.min_wavelength.to_string()),
            ("pc.mult", f.pc.mult.to_string()),
            ("pc.sigma_on_f", f.pc.sigma_on_f.to_string()),
            ("pc.k", f.pc.noise_k.to_string()),
            ("pc.epsilon", f.pc.epsilon.to_string()),
            ("norm.kind", choice_name(self.norm_kind, NORM).into()),
            ("norm.min", self.norm_min.to_string()),
            ("norm.max", self.norm_max.to_string()),
            ("net.maps", join(&self.maps)),
            ("net.kernels", join(&self.kernels)),
            ("net.pools", join(&self.pools)),
            ("net.beta", self.beta.to_string()),
            ("train.lr", self.train.initial_lr.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch", self.train.batch_size.to_string()),
            ("split.ratio", self.split.train_ratio.to_string()),
            ("split.cap", self.split.per_class_cap.to_string()),
            ("split.cap_unit", choice_name(self.split.cap_unit, CAP_UNIT).into()),
            ("seed.split", self.split.seed.to_string()),
            ("seed.init", self.train.init_seed.to_string()),
            ("seed.shuffle", self.train.shuffle_seed.to_string()),
            ("synth.seed", self.synth.seed.to_string()),
            ("synth.images", self.synth.images.to_string()),
            ("synth.side", self.synth.side.to_string()),
            ("synth.points", self.synth.points_per_image.to_string()),
            ("synth.cells", self.synth.cells.to_string()),
            ("synth.noise", self.synth.noise_sigma.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Defaults, then the optional file, then `overrides`; validated.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            for (line, key, value) in parse_text(&text)? {
                cfg.set(&key, &value)
                    .map_err(|e| e.context(format!("{}:{line}", path.display())))?;
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value).map_err(|e| e.context("command line"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn normalization(&self) -> Result<NormalizationSpec, CliError> {
        Ok(match self.norm_kind {
            NormalizationKind::MinMax => NormalizationSpec::min_max(self.norm_min, self.norm_max)?,
            NormalizationKind::ZScore => NormalizationSpec::z_score(),
        })
    }

    pub fn sample_config(&self) -> Result<SampleConfig, CliError> {
        Ok(SampleConfig {
            patch: self.patch.clone(),
            enhancement: self.enhancement,
            features: self.features,
            normalization: self.normalization()?,
        })
    }

    pub fn network_spec(&self, classes: usize) -> NetworkSpec {
        let stages: Vec<(usize, usize, usize)> = self
            .maps
            .iter()
            .zip(&self.kernels)
            .zip(&self.pools)
            .map(|((&m, &k), &p)| (m, k, p))
            .collect();
        NetworkSpec::from_stages(
            self.patch.unified_size(),
            3 + self.features.channel_count(),
            &stages,
            classes,
            ActivationSpec { beta: self.beta },
        )
    }

    /// Checks each section and that the unified patch size propagates through
    /// the network layout.
    pub fn validate(&self) -> Result<(), CliError> {
        match self.enhancement.kind {
            EnhancementKind::PercentileStretch => self.enhancement.validate()?,
            EnhancementKind::None => {}
            other => return Err(PreprocessError::UnsupportedEnhancement(other).into()),
        }
        self.patch.validate()?;
        self.normalization()?;
        if self.features.flags.pc {
            self.features.pc.validate()?;
        }
        if !(self.features.zca.epsilon > 0.0) {
            return Err(CliError::config("zca.epsilon must be positive"));
        }
        if self.maps.is_empty() || self.maps.len() != self.kernels.len() || self.maps.len() != self.pools.len() {
            return Err(CliError::config(
                "net.maps, net.kernels and net.pools must be non-empty lists of equal length",
            ));
        }
        if !(self.beta > 0.0) {
            return Err(CliError::config("net.beta must be positive"));
        }
        self.train.validate()?;
        self.network_spec(1).plan()?;
        Ok(())
    }
}

/// `(line number, key, value)` for each setting; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `(key, value)` pairs in command-line order.
pub type Overrides = Vec<(String, String)>;

/// Pulls `--section.key value` and `--section.key=value` pairs out of `args`,
/// returning them in order and leaving everything else.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|name| name.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(name) => {
                let (key, value) = match name.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => {
                        let v = it
                            .next()
                            .ok_or_else(|| CliError::config(format!("--{name} needs a value")))?;
                        (name.to_string(), v)
                    }
                };
                overrides.push((key, value));
            }
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}
