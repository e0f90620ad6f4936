//! Real-valued image grids, resampling and per-channel normalization.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("data length {len} does not match {height}x{width}x{channels}")]
    LengthMismatch {
        height: usize,
        width: usize,
        channels: usize,
        len: usize,
    },
    #[error("grid dimensions must be positive (got {height}x{width}x{channels})")]
    EmptyGrid {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("channel {channel} is constant; cannot normalize")]
    ConstantChannel { channel: usize },
    #[error("coordinate ({y}, {x}) outside {height}x{width} grid")]
    OutOfBounds {
        y: f64,
        x: f64,
        height: usize,
        width: usize,
    },
    #[error("channel {channel} out of range for {channels}-channel grid")]
    BadChannel { channel: usize, channels: usize },
    #[error("invalid normalization range [{min}, {max}]")]
    InvalidRange { min: f64, max: f64 },
}

/// H x W x C samples stored row-major as (row, col, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "grid dimensions must be positive"
        );
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, GridError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(GridError::EmptyGrid {
                height,
                width,
                channels,
            });
        }
        if data.len() != height * width * channels {
            return Err(GridError::LengthMismatch {
                height,
                width,
                channels,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(row, col, channel)` everywhere.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut g = Self::zeros(height, width, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    g.data[(y * width + x) * channels + c] = f(y, x, c);
                }
            }
        }
        g
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Sample with row/col clamped to the grid (replicate padding).
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> f64 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.get(yy, xx, c)
    }

    /// Copies one channel out as a single-channel grid.
    pub fn channel(&self, c: usize) -> ImageGrid {
        assert!(c < self.channels, "channel out of range");
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Interleaves grids of identical height/width into one multi-channel grid.
    pub fn stack_channels(parts: &[ImageGrid]) -> ImageGrid {
        assert!(!parts.is_empty(), "nothing to stack");
        let (h, w) = (parts[0].height, parts[0].width);
        assert!(
            parts.iter().all(|p| p.height == h && p.width == w),
            "stacked grids must share height and width"
        );
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        ImageGrid {
            height: h,
            width: w,
            channels,
            data,
        }
    }

    /// RGB to luma (0.299, 0.587, 0.114); single-channel grids are returned as is.
    pub fn to_gray(&self) -> ImageGrid {
        match self.channels {
            1 => self.clone(),
            3 => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect();
                ImageGrid {
                    height: self.height,
                    width: self.width,
                    channels: 1,
                    data,
                }
            }
            n => panic!("to_gray expects 1 or 3 channels, got {n}"),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Per-channel (min, max).
    pub fn channel_range(&self, c: usize) -> (f64, f64) {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    fn check_channel(&self, ch: usize) -> Result<(), GridError> {
        if ch >= self.channels {
            return Err(GridError::BadChannel {
                channel: ch,
                channels: self.channels,
            });
        }
        Ok(())
    }

    fn check_coord(&self, y: f64, x: f64) -> Result<(), GridError> {
        let inside = y >= 0.0
            && x >= 0.0
            && y <= (self.height - 1) as f64
            && x <= (self.width - 1) as f64;
        if inside {
            Ok(())
        } else {
            Err(GridError::OutOfBounds {
                y,
                x,
                height: self.height,
                width: self.width,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationKind {
    MinMax,
    ZScore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub kind: NormalizationKind,
    pub out_min: f64,
    pub out_max: f64,
}

impl NormalizationSpec {
    pub fn min_max(out_min: f64, out_max: f64) -> Result<Self, GridError> {
        if !(out_min < out_max) || !out_min.is_finite() || !out_max.is_finite() {
            return Err(GridError::InvalidRange {
                min: out_min,
                max: out_max,
            });
        }
        Ok(Self {
            kind: NormalizationKind::MinMax,
            out_min,
            out_max,
        })
    }

    pub fn z_score() -> Self {
        Self {
            kind: NormalizationKind::ZScore,
            out_min: 0.0,
            out_max: 0.0,
        }
    }

    /// Value a constant channel is mapped to when the caller opts into a fallback.
    pub fn constant_fill(&self) -> f64 {
        match self.kind {
            NormalizationKind::MinMax => 0.5 * (self.out_min + self.out_max),
            NormalizationKind::ZScore => 0.0,
        }
    }
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            kind: NormalizationKind::MinMax,
            out_min: -1.0,
            out_max: 1.0,
        }
    }
}

/// Per-channel min-max or z-score (sample standard deviation) normalization.
pub fn normalize(img: &ImageGrid, spec: &NormalizationSpec) -> Result<ImageGrid, GridError> {
    normalize_impl(img, spec, false)
}

/// Like [`normalize`], but constant channels are filled with
/// [`NormalizationSpec::constant_fill`] instead of failing.
pub fn normalize_or_fill(img: &ImageGrid, spec: &NormalizationSpec) -> ImageGrid {
    normalize_impl(img, spec, true).expect("fill mode never fails")
}

fn normalize_impl(
    img: &ImageGrid,
    spec: &NormalizationSpec,
    fill_constant: bool,
) -> Result<ImageGrid, GridError> {
    let c = img.channels;
    let n = img.height * img.width;
    let mut out = img.clone();
    for ch in 0..c {
        // (scale, offset) such that y = scale * x + offset
        let affine = match spec.kind {
            NormalizationKind::MinMax => {
                let (lo, hi) = img.channel_range(ch);
                if hi > lo {
                    let scale = (spec.out_max - spec.out_min) / (hi - lo);
                    Some((scale, lo, spec.out_min))
                } else {
                    None
                }
            }
            NormalizationKind::ZScore => {
                let mean = img.data.iter().skip(ch).step_by(c).sum::<f64>() / n as f64;
                let ss: f64 = img
                    .data
                    .iter()
                    .skip(ch)
                    .step_by(c)
                    .map(|v| (v - mean) * (v - mean))
                    .sum();
                let s = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
                if s > 0.0 {
                    Some((1.0 / s, mean, 0.0))
                } else {
                    None
                }
            }
        };
        match affine {
            Some((scale, shift, base)) => {
                for v in out.data.iter_mut().skip(ch).step_by(c) {
                    *v = scale * (*v - shift) + base;
                }
            }
            None if fill_constant => {
                let fill = spec.constant_fill();
                for v in out.data.iter_mut().skip(ch).step_by(c) {
                    *v = fill;
                }
            }
            None => return Err(GridError::ConstantChannel { channel: ch }),
        }
    }
    Ok(out)
}

/// Weighted sum of the four lattice neighbours of (y, x).
pub fn sample_bilinear(img: &ImageGrid, y: f64, x: f64, ch: usize) -> Result<f64, GridError> {
    img.check_channel(ch)?;
    img.check_coord(y, x)?;
    Ok(bilinear_unchecked(img, y, x, ch))
}

#[inline]
fn bilinear_unchecked(img: &ImageGrid, y: f64, x: f64, ch: usize) -> f64 {
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let dy = y - y0 as f64;
    let dx = x - x0 as f64;
    let w1 = (1.0 - dx) * (1.0 - dy);
    let w2 = (1.0 - dx) * dy;
    let w3 = dx * (1.0 - dy);
    let w4 = dx * dy;
    w1 * img.get(y0, x0, ch)
        + w2 * img.get(y1, x0, ch)
        + w3 * img.get(y0, x1, ch)
        + w4 * img.get(y1, x1, ch)
}

/// Nearest lattice index along one axis; exact halves go to the smaller index.
#[inline]
fn nearest_index(v: f64, len: usize) -> usize {
    let i = (v - 0.5).ceil();
    (i.max(0.0) as usize).min(len - 1)
}

/// Value at the Euclidean-nearest lattice point, ties toward smaller row then column.
pub fn sample_nearest(img: &ImageGrid, y: f64, x: f64, ch: usize) -> Result<f64, GridError> {
    img.check_channel(ch)?;
    img.check_coord(y, x)?;
    Ok(img.get(
        nearest_index(y, img.height),
        nearest_index(x, img.width),
        ch,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpolationKind {
    Nearest,
    Bilinear,
    #[default]
    Bicubic,
}

/// Catmull-Rom weights (a = -0.5) for taps at offsets -1, 0, 1, 2.
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let k_near = |d: f64| ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0;
    let k_far = |d: f64| ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A;
    [k_far(1.0 + t), k_near(t), k_near(1.0 - t), k_far(2.0 - t)]
}

/// Source coordinate of output index `i` under the half-pixel-centre convention.
#[inline]
fn source_coord(i: usize, src_len: usize, dst_len: usize) -> f64 {
    (i as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

/// Resample to `new_h` x `new_w`. Channel count is preserved.
///
/// Output pixel centres map onto input pixel centres (`src = (dst + 0.5) * scale - 0.5`),
/// clamped to the grid, so an identity resize reproduces the input exactly and
/// nearest-neighbour upscaling by an integer factor replicates every sample.
pub fn resize(img: &ImageGrid, new_h: usize, new_w: usize, kind: InterpolationKind) -> ImageGrid {
    assert!(new_h >= 1 && new_w >= 1, "resize target must be at least 1x1");
    if new_h == img.height && new_w == img.width {
        return img.clone();
    }
    let c = img.channels;
    let ys: Vec<f64> = (0..new_h)
        .map(|i| source_coord(i, img.height, new_h).clamp(0.0, (img.height - 1) as f64))
        .collect();
    let xs: Vec<f64> = (0..new_w)
        .map(|i| source_coord(i, img.width, new_w).clamp(0.0, (img.width - 1) as f64))
        .collect();
    match kind {
        InterpolationKind::Nearest => ImageGrid::from_fn(new_h, new_w, c, |y, x, ch| {
            img.get(
                nearest_index(ys[y], img.height),
                nearest_index(xs[x], img.width),
                ch,
            )
        }),
        InterpolationKind::Bilinear => {
            ImageGrid::from_fn(new_h, new_w, c, |y, x, ch| bilinear_unchecked(img, ys[y], xs[x], ch))
        }
        InterpolationKind::Bicubic => resize_bicubic(img, &ys, &xs),
    }
}

fn resize_bicubic(img: &ImageGrid, ys: &[f64], xs: &[f64]) -> ImageGrid {
    let c = img.channels;
    // horizontal pass: height x new_w
    let taps = |v: f64| {
        let base = v.floor();
        (base as isize, cubic_weights(v - base))
    };
    let xtaps: Vec<_> = xs.iter().map(|&v| taps(v)).collect();
    let mut tmp = ImageGrid::zeros(img.height, xs.len(), c);
    for y in 0..img.height {
        for (x, &(x0, w)) in xtaps.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    acc += wk * img.get_clamped(y as isize, x0 - 1 + k as isize, ch);
                }
                tmp.set(y, x, ch, acc);
            }
        }
    }
    let mut out = ImageGrid::zeros(ys.len(), xs.len(), c);
    for (y, &v) in ys.iter().enumerate() {
        let (y0, w) = taps(v);
        for x in 0..xs.len() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    acc += wk * tmp.get_clamped(y0 - 1 + k as isize, x as isize, ch);
                }
                out.set(y, x, ch, acc);
            }
        }
    }
    out
}
