//! Colour enhancement and hybrid multi-size patch extraction.

use thiserror::Error;

use crate::dataset::AnnotatedPoint;
use crate::grid::{resize, ImageGrid, InterpolationKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("channel {channel} has coinciding percentiles ({value}); cannot stretch")]
    DegenerateHistogram { channel: usize, value: f64 },
    #[error("enhancement {0:?} is reserved but not implemented")]
    UnsupportedEnhancement(EnhancementKind),
    #[error("enhancement expects 1 or 3 channels, got {0}")]
    ChannelCount(usize),
    #[error("invalid enhancement percentiles low={low} high={high}")]
    InvalidPercentiles { low: f64, high: f64 },
    #[error("invalid patch sizes {0:?}: need odd, strictly increasing, non-empty")]
    InvalidSizes(Vec<usize>),
    #[error("point ({row}, {col}) outside {height}x{width} image")]
    PointOutside {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnhancementKind {
    None,
    #[default]
    PercentileStretch,
    /// Reserved plug-in slot; selecting it is an error.
    Bazeille,
    /// Reserved plug-in slot; selecting it is an error.
    Iqbal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancementSpec {
    pub kind: EnhancementKind,
    pub low_pct: f64,
    pub high_pct: f64,
}

impl Default for EnhancementSpec {
    fn default() -> Self {
        Self {
            kind: EnhancementKind::PercentileStretch,
            low_pct: 1.0,
            high_pct: 99.0,
        }
    }
}

impl EnhancementSpec {
    pub fn none() -> Self {
        Self {
            kind: EnhancementKind::None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        let ok = self.low_pct > 0.0
            && self.low_pct < 50.0
            && self.high_pct > 50.0
            && self.high_pct < 100.0;
        if ok {
            Ok(())
        } else {
            Err(PreprocessError::InvalidPercentiles {
                low: self.low_pct,
                high: self.high_pct,
            })
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Per-channel percentile stretch onto 0..255.
pub fn enhance(img: &ImageGrid, spec: &EnhancementSpec) -> Result<ImageGrid, PreprocessError> {
    let c = img.channels();
    if c != 1 && c != 3 {
        return Err(PreprocessError::ChannelCount(c));
    }
    match spec.kind {
        EnhancementKind::None => return Ok(img.clone()),
        EnhancementKind::PercentileStretch => {}
        other => return Err(PreprocessError::UnsupportedEnhancement(other)),
    }
    spec.validate()?;
    let mut out = img.clone();
    for ch in 0..c {
        let mut vals: Vec<f64> = img.data().iter().skip(ch).step_by(c).copied().collect();
        vals.sort_by(f64::total_cmp);
        let lo = nearest_rank(&vals, spec.low_pct);
        let hi = nearest_rank(&vals, spec.high_pct);
        if hi <= lo {
            return Err(PreprocessError::DegenerateHistogram {
                channel: ch,
                value: lo,
            });
        }
        let scale = 255.0 / (hi - lo);
        for v in out.data_mut().iter_mut().skip(ch).step_by(c) {
            *v = ((*v - lo) * scale).clamp(0.0, 255.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnifyMode {
    UpScale,
    #[default]
    DownScale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridPatchSpec {
    pub sizes: Vec<usize>,
    pub unify: UnifyMode,
    pub interp: InterpolationKind,
}

impl Default for HybridPatchSpec {
    fn default() -> Self {
        Self {
            sizes: vec![61, 121, 181],
            unify: UnifyMode::DownScale,
            interp: InterpolationKind::Bicubic,
        }
    }
}

impl HybridPatchSpec {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let odd = self.sizes.iter().all(|s| s % 2 == 1);
        let increasing = self.sizes.windows(2).all(|w| w[0] < w[1]);
        if self.sizes.is_empty() || !odd || !increasing {
            return Err(PreprocessError::InvalidSizes(self.sizes.clone()));
        }
        Ok(())
    }

    pub fn unified_size(&self) -> usize {
        match self.unify {
            UnifyMode::UpScale => *self.sizes.last().expect("validated sizes"),
            UnifyMode::DownScale => self.sizes[0],
        }
    }
}

/// Co-centred patches for one annotated point, all at the unified size.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStack {
    pub point: AnnotatedPoint,
    pub patches: Vec<ImageGrid>,
    pub label: usize,
}

/// `size` x `size` window centred on (row, col), replicate-padded at the borders.
pub fn crop_centered(img: &ImageGrid, row: usize, col: usize, size: usize) -> ImageGrid {
    let half = (size / 2) as isize;
    let (r0, c0) = (row as isize - half, col as isize - half);
    ImageGrid::from_fn(size, size, img.channels(), |y, x, ch| {
        img.get_clamped(r0 + y as isize, c0 + x as isize, ch)
    })
}

/// Cuts one window per configured size around (row, col) and rescales each to
/// the unified size. Patch order follows `spec.sizes`.
pub fn hybrid_patches(
    img: &ImageGrid,
    row: usize,
    col: usize,
    spec: &HybridPatchSpec,
) -> Result<Vec<ImageGrid>, PreprocessError> {
    spec.validate()?;
    if row >= img.height() || col >= img.width() {
        return Err(PreprocessError::PointOutside {
            row,
            col,
            height: img.height(),
            width: img.width(),
        });
    }
    let unified = spec.unified_size();
    Ok(spec
        .sizes
        .iter()
        .map(|&s| resize(&crop_centered(img, row, col, s), unified, unified, spec.interp))
        .collect())
}

pub fn extract_hybrid(
    img: &ImageGrid,
    pt: &AnnotatedPoint,
    label: usize,
    spec: &HybridPatchSpec,
) -> Result<PatchStack, PreprocessError> {
    let patches = hybrid_patches(img, pt.row, pt.col, spec)?;
    Ok(PatchStack {
        point: pt.clone(),
        patches,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(row: usize, col: usize) -> AnnotatedPoint {
        AnnotatedPoint {
            image_id: "img".into(),
            row,
            col,
            label: "a".into(),
        }
    }

    fn ramp(h: usize, w: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, 1, |y, x, _| ((y * w + x) % 256) as f64)
    }

    #[test]
    fn none_is_identity() {
        let img = ramp(10, 10);
        assert_eq!(enhance(&img, &EnhancementSpec::none()).unwrap(), img);
    }

    #[test]
    fn stretch_clips_tails() {
        // 0..=255, each value 4 times
        let img = ImageGrid::from_fn(32, 32, 1, |y, x, _| ((y * 32 + x) / 4) as f64);
        let out = enhance(&img, &EnhancementSpec::default()).unwrap();
        let mut sorted: Vec<f64> = img.data().to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = nearest_rank(&sorted, 1.0);
        let hi = nearest_rank(&sorted, 99.0);
        assert_eq!((lo, hi), (2.0, 253.0));
        for (i, o) in img.data().iter().zip(out.data()) {
            if *i <= lo {
                assert_eq!(*o, 0.0);
            }
            if *i >= hi {
                assert_eq!(*o, 255.0);
            }
            assert!((0.0..=255.0).contains(o));
        }
    }

    #[test]
    fn stretch_is_per_channel() {
        let img = ImageGrid::from_fn(20, 20, 3, |y, x, c| ((y * 20 + x) as f64) * (c as f64 + 1.0) * 0.1 + 7.0 * c as f64);
        let out = enhance(&img, &EnhancementSpec::default()).unwrap();
        for c in 0..3 {
            let (lo, hi) = out.channel_range(c);
            assert_eq!((lo, hi), (0.0, 255.0));
        }
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let img = ImageGrid::filled(5, 5, 1, 9.0);
        assert!(matches!(
            enhance(&img, &EnhancementSpec::default()),
            Err(PreprocessError::DegenerateHistogram { channel: 0, .. })
        ));
    }

    #[test]
    fn reserved_kinds_are_unsupported() {
        let img = ramp(5, 5);
        for kind in [EnhancementKind::Bazeille, EnhancementKind::Iqbal] {
            let spec = EnhancementSpec {
                kind,
                ..EnhancementSpec::default()
            };
            assert_eq!(
                enhance(&img, &spec),
                Err(PreprocessError::UnsupportedEnhancement(kind))
            );
        }
    }

    #[test]
    fn hybrid_down_and_up_scale_shapes() {
        let img = ImageGrid::from_fn(200, 200, 3, |y, x, c| (y + x + c) as f64);
        let mut spec = HybridPatchSpec::default();
        let down = extract_hybrid(&img, &point(100, 100), 0, &spec).unwrap();
        assert_eq!(down.patches.len(), 3);
        assert!(down.patches.iter().all(|p| p.shape() == (61, 61, 3)));
        spec.unify = UnifyMode::UpScale;
        let up = extract_hybrid(&img, &point(100, 100), 0, &spec).unwrap();
        assert!(up.patches.iter().all(|p| p.shape() == (181, 181, 3)));
    }

    #[test]
    fn single_size_patch_is_raw_crop() {
        let img = ramp(100, 100);
        let spec = HybridPatchSpec {
            sizes: vec![61],
            ..HybridPatchSpec::default()
        };
        let stack = extract_hybrid(&img, &point(50, 50), 0, &spec).unwrap();
        let p = &stack.patches[0];
        for y in 0..61 {
            for x in 0..61 {
                assert_eq!(p.get(y, x, 0), img.get(y + 20, x + 20, 0));
            }
        }
    }

    #[test]
    fn border_points_replicate_edges() {
        let img = ramp(10, 10);
        let p = crop_centered(&img, 0, 0, 5);
        assert_eq!(p.get(0, 0, 0), img.get(0, 0, 0));
        assert_eq!(p.get(2, 2, 0), img.get(0, 0, 0));
        assert_eq!(p.get(4, 4, 0), img.get(2, 2, 0));
    }

    #[test]
    fn constant_image_gives_constant_patches() {
        let img = ImageGrid::filled(64, 64, 3, 77.0);
        let stack = extract_hybrid(&img, &point(3, 60), 1, &HybridPatchSpec::default()).unwrap();
        for p in &stack.patches {
            assert!(p.data().iter().all(|v| (v - 77.0).abs() < 1e-9));
        }
    }

    #[test]
    fn invalid_sizes_rejected() {
        for sizes in [vec![], vec![60], vec![61, 61], vec![121, 61]] {
            let spec = HybridPatchSpec {
                sizes,
                ..HybridPatchSpec::default()
            };
            assert!(spec.validate().is_err());
        }
    }
}
