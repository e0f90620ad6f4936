//! Supplementary feature-map channels appended after the colour channels,
//! always in the order ZCA, WLD, PC.

mod phase;
mod wld;
mod zca;

pub use phase::{phase_congruency, PcFilterBank, PcSpec};
pub use wld::{wld, WldEmit, WldSpec};
pub use zca::{zca_whiten, zca_whiten_raw, ZcaSpec};

use thiserror::Error;

use crate::grid::{GridError, ImageGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature maps need a single-channel image, got {0} channels")]
    NotGrayscale(usize),
    #[error("image {height}x{width} smaller than the minimum side {min}")]
    TooSmall {
        min: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("filter bank built for {expected:?}, image is {got:?}")]
    BankSizeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeatureFlags {
    pub zca: bool,
    pub wld: bool,
    pub pc: bool,
}

impl FeatureFlags {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self {
            zca: true,
            wld: true,
            pc: true,
        }
    }

    pub fn any(&self) -> bool {
        self.zca || self.wld || self.pc
    }
}

/// Which image the feature maps are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSource {
    #[default]
    Enhanced,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureConfig {
    pub flags: FeatureFlags,
    pub source: FeatureSource,
    pub zca: ZcaSpec,
    pub wld: WldSpec,
    pub pc: PcSpec,
}

impl FeatureConfig {
    /// Number of channels the enabled maps add.
    pub fn channel_count(&self) -> usize {
        let wld = match self.wld.emit {
            WldEmit::Both => 2,
            _ => 1,
        };
        usize::from(self.flags.zca) + if self.flags.wld { wld } else { 0 } + usize::from(self.flags.pc)
    }
}

/// Computes the enabled maps for patches of one fixed size. The phase
/// congruency bank is built once and reused.
#[derive(Debug)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    bank: Option<PcFilterBank>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, side: usize) -> Result<Self, FeatureError> {
        let bank = if config.flags.pc {
            Some(PcFilterBank::new(side, side, &config.pc)?)
        } else {
            None
        };
        Ok(Self { config, bank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// `gray` is a single-channel patch scaled to [0, 1].
    pub fn extract(&self, gray: &ImageGrid) -> Result<Vec<ImageGrid>, FeatureError> {
        let mut maps = Vec::with_capacity(3);
        if self.config.flags.zca {
            maps.push(zca_whiten(gray, &self.config.zca)?);
        }
        if self.config.flags.wld {
            maps.push(wld(gray, &self.config.wld)?);
        }
        if let Some(bank) = &self.bank {
            maps.push(bank.apply(gray)?);
        }
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_counts_follow_flags() {
        let mut cfg = FeatureConfig::default();
        assert_eq!(cfg.channel_count(), 0);
        cfg.flags = FeatureFlags::all();
        assert_eq!(cfg.channel_count(), 3);
        cfg.wld.emit = WldEmit::Both;
        assert_eq!(cfg.channel_count(), 4);
    }

    #[test]
    fn extractor_emits_maps_in_fixed_order() {
        let cfg = FeatureConfig {
            flags: FeatureFlags::all(),
            ..FeatureConfig::default()
        };
        let ex = FeatureExtractor::new(cfg, 16).unwrap();
        let gray = ImageGrid::from_fn(16, 16, 1, |y, x, _| ((y * 5 + x * 3) % 7) as f64 / 7.0 + 0.1);
        let maps = ex.extract(&gray).unwrap();
        assert_eq!(maps.len(), 3);
        assert_eq!(maps[0], zca_whiten(&gray, &cfg.zca).unwrap());
        assert_eq!(maps[1], wld(&gray, &cfg.wld).unwrap());
        assert_eq!(maps[2], phase_congruency(&gray, &cfg.pc).unwrap());
    }
}
