//! Seeded synthetic benthic-style mosaics with three texture classes.
//!
//! Each image is a Voronoi mosaic whose cells carry one of three textures: a
//! smooth colour gradient, a fine checkerboard or oriented stripes. Every
//! image holds every class, with per-cell random colours, scales and
//! orientations plus additive Gaussian noise. Points are drawn uniformly
//! inside the cells of their class.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use reefnet_core::io::save_png;
use reefnet_core::ImageGrid;

use crate::error::CliError;

pub const CLASSES: [&str; 3] = ["checker", "gradient", "stripes"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub images: usize,
    pub side: usize,
    pub points_per_image: usize,
    /// Voronoi cells per image; classes are dealt round-robin.
    pub cells: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            images: 9,
            side: 256,
            points_per_image: 60,
            cells: 3,
            noise_sigma: 12.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Texture {
    Gradient { angle: f64, span: f64 },
    Checker { period: f64, angle: f64 },
    Stripes { period: f64, angle: f64 },
}

impl Texture {
    fn random(class: usize, rng: &mut ChaCha8Rng) -> Self {
        let angle = rng.gen_range(0.0..PI);
        match CLASSES[class] {
            "gradient" => Texture::Gradient {
                angle: rng.gen_range(0.0..2.0 * PI),
                span: rng.gen_range(120.0..320.0),
            },
            "checker" => Texture::Checker {
                period: rng.gen_range(3.0..6.0),
                angle,
            },
            _ => Texture::Stripes {
                period: rng.gen_range(7.0..14.0),
                angle,
            },
        }
    }

    /// Pattern value in [0, 1] at pixel (y, x).
    fn value(&self, y: f64, x: f64) -> f64 {
        match *self {
            Texture::Gradient { angle, span } => {
                let t = (x * angle.cos() + y * angle.sin()) / span;
                0.5 + 0.5 * (PI * t).sin()
            }
            Texture::Checker { period, angle } => {
                let (c, s) = (angle.cos(), angle.sin());
                let u = ((x * c + y * s) / period).floor() as i64;
                let v = ((-x * s + y * c) / period).floor() as i64;
                ((u + v).rem_euclid(2)) as f64
            }
            Texture::Stripes { period, angle } => {
                let t = (x * angle.cos() + y * angle.sin()) / period;
                0.5 + 0.5 * (2.0 * PI * t).sin()
            }
        }
    }
}

struct Cell {
    centre: (f64, f64),
    class: usize,
    texture: Texture,
    dark: [f64; 3],
    light: [f64; 3],
}

/// Generated image and its annotated points `(row, col, class)`.
pub struct SynthImage {
    pub id: String,
    pub image: ImageGrid,
    pub points: Vec<(usize, usize, usize)>,
}

fn random_colour(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

fn generate_image(index: usize, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> SynthImage {
    let side = spec.side;
    let cells_n = spec.cells.max(CLASSES.len());
    let mut classes: Vec<usize> = (0..cells_n).map(|i| i % CLASSES.len()).collect();
    classes.shuffle(rng);
    let cells: Vec<Cell> = classes
        .into_iter()
        .map(|class| Cell {
            centre: (rng.gen_range(0.0..side as f64), rng.gen_range(0.0..side as f64)),
            class,
            texture: Texture::random(class, rng),
            dark: random_colour(rng, 20.0, 110.0),
            light: random_colour(rng, 140.0, 235.0),
        })
        .collect();
    let owner = |y: usize, x: usize| -> usize {
        let (fy, fx) = (y as f64, x as f64);
        let d = |c: &Cell| (c.centre.0 - fy).powi(2) + (c.centre.1 - fx).powi(2);
        (0..cells.len())
            .min_by(|&a, &b| d(&cells[a]).total_cmp(&d(&cells[b])))
            .expect("at least one cell")
    };
    let labels: Vec<usize> = (0..side * side).map(|i| owner(i / side, i % side)).collect();
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let mut image = ImageGrid::zeros(side, side, 3);
    for y in 0..side {
        for x in 0..side {
            let cell = &cells[labels[y * side + x]];
            let t = cell.texture.value(y as f64, x as f64);
            for c in 0..3 {
                let v = cell.dark[c] + t * (cell.light[c] - cell.dark[c]) + noise.sample(rng);
                image.set(y, x, c, v.round().clamp(0.0, 255.0));
            }
        }
    }

    let per_class = spec.points_per_image / CLASSES.len();
    let extra = spec.points_per_image % CLASSES.len();
    let mut points = Vec::with_capacity(spec.points_per_image);
    for class in 0..CLASSES.len() {
        let want = per_class + usize::from(class < extra);
        let mut pixels: Vec<usize> = (0..side * side)
            .filter(|&i| cells[labels[i]].class == class)
            .collect();
        pixels.shuffle(rng);
        points.extend(pixels.into_iter().take(want).map(|i| (i / side, i % side, class)));
    }
    points.sort_unstable();
    SynthImage {
        id: format!("synth_{index:02}.png"),
        image,
        points,
    }
}

/// Generates every image in order from one seeded stream.
pub fn generate(spec: &SynthSpec) -> Vec<SynthImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.images).map(|i| generate_image(i, spec, &mut rng)).collect()
}

/// Writes `images/*.png` and `annotations.csv` under `dir`. Returns the
/// number of annotation rows.
pub fn write_dataset(dir: &Path, spec: &SynthSpec) -> Result<usize, CliError> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| CliError::io(format!("{}: {e}", images_dir.display())))?;
    let mut csv = String::from("image,row,col,label\n");
    let mut rows = 0;
    for img in generate(spec) {
        save_png(&images_dir.join(&img.id), &img.image)?;
        for (r, c, class) in &img.points {
            csv.push_str(&format!("{},{r},{c},{}\n", img.id, CLASSES[*class]));
            rows += 1;
        }
    }
    let path = dir.join("annotations.csv");
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(csv.as_bytes()))
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Ok(rows)
}
