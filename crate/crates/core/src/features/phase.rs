//! Phase congruency from a log-Gabor filter bank (Kovesi's energy formulation).
//!
//! The image is mirror-extended to twice its size before filtering so the
//! periodic frequency-domain convolution sees no wrap-around discontinuity.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::FeatureError;
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcSpec {
    pub scales: usize,
    pub orientations: usize,
    pub min_wavelength: f64,
    pub mult: f64,
    pub sigma_on_f: f64,
    pub noise_k: f64,
    pub epsilon: f64,
}

impl Default for PcSpec {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 6,
            min_wavelength: 3.0,
            mult: 2.1,
            sigma_on_f: 0.55,
            noise_k: 2.0,
            epsilon: 1e-4,
        }
    }
}

impl PcSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.scales < 2 || self.orientations < 2 {
            return Err(FeatureError::InvalidParameter(
                "phase congruency needs >= 2 scales and >= 2 orientations",
            ));
        }
        if !(self.mult > 1.0) {
            return Err(FeatureError::InvalidParameter("pc mult must exceed 1"));
        }
        if !(self.sigma_on_f > 0.0 && self.sigma_on_f < 1.0) {
            return Err(FeatureError::InvalidParameter("pc sigma_on_f must lie in (0, 1)"));
        }
        if !(self.min_wavelength > 0.0) || !(self.epsilon > 0.0) || self.noise_k < 0.0 {
            return Err(FeatureError::InvalidParameter("pc wavelength/epsilon/k out of range"));
        }
        Ok(())
    }
}

/// Butterworth low-pass applied to every log-Gabor filter (cut-off 0.45, order 15).
const LOWPASS_CUTOFF: f64 = 0.45;
const LOWPASS_ORDER: i32 = 15;

/// Precomputed frequency-domain filters and FFT plans for one image size.
/// Immutable once built; share it across workers.
pub struct PcFilterBank {
    spec: PcSpec,
    rows: usize,
    cols: usize,
    ext_rows: usize,
    ext_cols: usize,
    /// `filters[o * scales + s]`, each `ext_rows * ext_cols` real gains.
    filters: Vec<Vec<f64>>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PcFilterBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PcFilterBank")
            .field("spec", &self.spec)
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

/// Signed normalised frequency of DFT bin `k` in a length-`n` transform.
fn bin_frequency(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n_f = n as f64;
    if k < n_f / 2.0 {
        k / n_f
    } else {
        (k - n_f) / n_f
    }
}

impl PcFilterBank {
    pub fn new(rows: usize, cols: usize, spec: &PcSpec) -> Result<Self, FeatureError> {
        spec.validate()?;
        if rows < 2 || cols < 2 {
            return Err(FeatureError::TooSmall {
                min: 2,
                height: rows,
                width: cols,
            });
        }
        let (er, ec) = (2 * rows, 2 * cols);
        let mut radius = vec![0.0; er * ec];
        let mut theta = vec![0.0; er * ec];
        for v in 0..er {
            let fy = bin_frequency(v, er);
            for u in 0..ec {
                let fx = bin_frequency(u, ec);
                radius[v * ec + u] = (fx * fx + fy * fy).sqrt();
                theta[v * ec + u] = (-fy).atan2(fx);
            }
        }
        let lowpass: Vec<f64> = radius
            .iter()
            .map(|&r| 1.0 / (1.0 + (r / LOWPASS_CUTOFF).powi(2 * LOWPASS_ORDER)))
            .collect();

        let log_sigma_sq = 2.0 * spec.sigma_on_f.ln().powi(2);
        let radial: Vec<Vec<f64>> = (0..spec.scales)
            .map(|s| {
                let wavelength = spec.min_wavelength * spec.mult.powi(s as i32);
                let fo = 1.0 / wavelength;
                radius
                    .iter()
                    .zip(&lowpass)
                    .map(|(&r, &lp)| {
                        if r == 0.0 {
                            0.0
                        } else {
                            (-(r / fo).ln().powi(2) / log_sigma_sq).exp() * lp
                        }
                    })
                    .collect()
            })
            .collect();

        let norient = spec.orientations as f64;
        let mut filters = Vec::with_capacity(spec.orientations * spec.scales);
        for o in 0..spec.orientations {
            let angle = o as f64 * PI / norient;
            let (sin_a, cos_a) = angle.sin_cos();
            // raised-cosine angular spread
            let spread: Vec<f64> = theta
                .iter()
                .map(|&t| {
                    let (st, ct) = t.sin_cos();
                    let ds = st * cos_a - ct * sin_a;
                    let dc = ct * cos_a + st * sin_a;
                    let dtheta = (ds.atan2(dc).abs() * norient / 2.0).min(PI);
                    (dtheta.cos() + 1.0) / 2.0
                })
                .collect();
            for r in &radial {
                filters.push(r.iter().zip(&spread).map(|(a, b)| a * b).collect());
            }
        }

        let mut planner = FftPlanner::new();
        Ok(Self {
            spec: *spec,
            rows,
            cols,
            ext_rows: er,
            ext_cols: ec,
            filters,
            row_fwd: planner.plan_fft_forward(ec),
            row_inv: planner.plan_fft_inverse(ec),
            col_fwd: planner.plan_fft_forward(er),
            col_inv: planner.plan_fft_inverse(er),
        })
    }

    pub fn spec(&self) -> &PcSpec {
        &self.spec
    }

    pub fn size(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let (er, ec) = (self.ext_rows, self.ext_cols);
        let (rf, cf) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rf.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); er];
        for u in 0..ec {
            for v in 0..er {
                column[v] = buf[v * ec + u];
            }
            cf.process(&mut column);
            for v in 0..er {
                buf[v * ec + u] = column[v];
            }
        }
        if inverse {
            let norm = 1.0 / (er * ec) as f64;
            for z in buf.iter_mut() {
                *z *= norm;
            }
        }
    }

    /// Phase congruency in [0, 1] for a single-channel image of the bank's size.
    pub fn apply(&self, img: &ImageGrid) -> Result<ImageGrid, FeatureError> {
        if img.channels() != 1 {
            return Err(FeatureError::NotGrayscale(img.channels()));
        }
        if (img.height(), img.width()) != (self.rows, self.cols) {
            return Err(FeatureError::BankSizeMismatch {
                expected: (self.rows, self.cols),
                got: (img.height(), img.width()),
            });
        }
        let (er, ec) = (self.ext_rows, self.ext_cols);
        let (rows, cols) = (self.rows, self.cols);
        let mirror = |i: usize, n: usize| if i < n { i } else { 2 * n - 1 - i };
        let mut spectrum: Vec<Complex64> = (0..er * ec)
            .map(|k| {
                let (v, u) = (k / ec, k % ec);
                Complex64::new(img.get(mirror(v, rows), mirror(u, cols), 0), 0.0)
            })
            .collect();
        self.fft2(&mut spectrum, false);

        let spec = &self.spec;
        let n = er * ec;
        let mut energy_all = vec![0.0; n];
        let mut an_all = vec![0.0; n];
        let mut response = vec![Complex64::new(0.0, 0.0); n];
        let mut scale_responses: Vec<Vec<Complex64>> = vec![Vec::new(); spec.scales];
        for o in 0..spec.orientations {
            let mut sum_e = vec![0.0; n];
            let mut sum_o = vec![0.0; n];
            let mut sum_an = vec![0.0; n];
            let mut tau = 0.0;
            for (s, slot) in scale_responses.iter_mut().enumerate() {
                let filter = &self.filters[o * spec.scales + s];
                for ((r, z), g) in response.iter_mut().zip(&spectrum).zip(filter) {
                    *r = z * g;
                }
                self.fft2(&mut response, true);
                let mut amplitude: Vec<f64> = response.iter().map(|z| z.norm()).collect();
                for k in 0..n {
                    sum_e[k] += response[k].re;
                    sum_o[k] += response[k].im;
                    sum_an[k] += amplitude[k];
                }
                if s == 0 {
                    // Rayleigh-distributed noise amplitude: median / sqrt(ln 4)
                    tau = median(&mut amplitude) / 4f64.ln().sqrt();
                }
                slot.clone_from(&response);
            }
            let mut energy = vec![0.0; n];
            for k in 0..n {
                let x_energy = (sum_e[k] * sum_e[k] + sum_o[k] * sum_o[k]).sqrt() + spec.epsilon;
                let mean_e = sum_e[k] / x_energy;
                let mean_o = sum_o[k] / x_energy;
                energy[k] = scale_responses
                    .iter()
                    .map(|r| {
                        let (e, od) = (r[k].re, r[k].im);
                        e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs()
                    })
                    .sum();
            }
            let inv = 1.0 / spec.mult;
            let total_tau = tau * (1.0 - inv.powi(spec.scales as i32)) / (1.0 - inv);
            let noise_mean = total_tau * (PI / 2.0).sqrt();
            let noise_sigma = total_tau * ((4.0 - PI) / 2.0).sqrt();
            let threshold = noise_mean + spec.noise_k * noise_sigma;
            for k in 0..n {
                energy_all[k] += (energy[k] - threshold).max(0.0);
                an_all[k] += sum_an[k];
            }
        }
        let data = (0..rows * cols)
            .map(|k| {
                let (y, x) = (k / cols, k % cols);
                let i = y * ec + x;
                (energy_all[i] / (an_all[i] + spec.epsilon)).clamp(0.0, 1.0)
            })
            .collect();
        Ok(ImageGrid::from_vec(rows, cols, 1, data)?)
    }
}

fn median(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Builds a bank for the image size and applies it once.
pub fn phase_congruency(img: &ImageGrid, spec: &PcSpec) -> Result<ImageGrid, FeatureError> {
    PcFilterBank::new(img.height(), img.width(), spec)?.apply(img)
}
