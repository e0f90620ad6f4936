//! Weber Local Descriptor maps: differential excitation and gradient orientation.

use std::f64::consts::{FRAC_PI_2, PI};

use super::FeatureError;
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WldEmit {
    #[default]
    Excitation,
    Orientation,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WldSpec {
    /// Excitation gain.
    pub alpha: f64,
    /// Guard added to the centre intensity.
    pub delta: f64,
    pub emit: WldEmit,
}

impl Default for WldSpec {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            delta: 1e-6,
            emit: WldEmit::Excitation,
        }
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Excitation `atan(alpha * sum(x_i - x_c) / (x_c + delta))` over the 3x3
/// neighbourhood, mapped to [0, 1]; orientation `atan2(below - above, right - left)`
/// mapped to [0, 1]. Borders replicate.
pub fn wld(img: &ImageGrid, spec: &WldSpec) -> Result<ImageGrid, FeatureError> {
    if img.channels() != 1 {
        return Err(FeatureError::NotGrayscale(img.channels()));
    }
    if img.height() < 3 || img.width() < 3 {
        return Err(FeatureError::TooSmall {
            min: 3,
            height: img.height(),
            width: img.width(),
        });
    }
    if !(spec.alpha > 0.0) || spec.delta < 0.0 {
        return Err(FeatureError::InvalidParameter("wld needs alpha > 0 and delta >= 0"));
    }
    let px = |y: usize, x: usize, dy: isize, dx: isize| {
        img.get_clamped(y as isize + dy, x as isize + dx, 0)
    };
    let excitation = |y: usize, x: usize| {
        let centre = img.get(y, x, 0);
        let diff: f64 = NEIGHBOURS
            .iter()
            .map(|&(dy, dx)| px(y, x, dy, dx) - centre)
            .sum();
        let ratio = spec.alpha * diff / (centre + spec.delta);
        // 0/0 on a zero-valued flat patch with delta = 0
        let xi = if ratio.is_nan() { 0.0 } else { ratio.atan() };
        (xi + FRAC_PI_2) / PI
    };
    let orientation = |y: usize, x: usize| {
        let gy = px(y, x, 1, 0) - px(y, x, -1, 0);
        let gx = px(y, x, 0, 1) - px(y, x, 0, -1);
        (gy.atan2(gx) + PI) / (2.0 * PI)
    };
    let (h, w) = (img.height(), img.width());
    let out = match spec.emit {
        WldEmit::Excitation => ImageGrid::from_fn(h, w, 1, |y, x, _| excitation(y, x)),
        WldEmit::Orientation => ImageGrid::from_fn(h, w, 1, |y, x, _| orientation(y, x)),
        WldEmit::Both => ImageGrid::from_fn(h, w, 2, |y, x, c| {
            if c == 0 {
                excitation(y, x)
            } else {
                orientation(y, x)
            }
        }),
    };
    Ok(out)
}
