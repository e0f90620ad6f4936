//! Grid file format and PNG import/export.
//!
//! Grid files: `RGRD` magic, `u16` version, `u32` height/width/channels, then
//! `f64` samples in row-major (row, col, channel) order. All little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::grid::{GridError, ImageGrid};

pub const GRID_MAGIC: &[u8; 4] = b"RGRD";
pub const GRID_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("{path}: {message}")]
    Image { path: String, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn write_grid<W: Write>(mut w: W, grid: &ImageGrid) -> Result<(), IoError> {
    w.write_all(GRID_MAGIC)?;
    w.write_u16::<LittleEndian>(GRID_VERSION)?;
    let (h, wd, c) = grid.shape();
    for dim in [h, wd, c] {
        w.write_u32::<LittleEndian>(dim as u32)?;
    }
    for &v in grid.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_grid<R: Read>(mut r: R) -> Result<ImageGrid, IoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return Err(IoError::BadMagic { expected: "RGRD" });
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != GRID_VERSION {
        return Err(IoError::BadVersion(version));
    }
    let h = r.read_u32::<LittleEndian>()? as usize;
    let w = r.read_u32::<LittleEndian>()? as usize;
    let c = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0.0; h * w * c];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Ok(ImageGrid::from_vec(h, w, c, data)?)
}

pub fn save_grid(path: &Path, grid: &ImageGrid) -> Result<(), IoError> {
    let f = File::create(path).map_err(|e| file_err(path, e))?;
    let mut w = BufWriter::new(f);
    write_grid(&mut w, grid)?;
    w.flush().map_err(|e| file_err(path, e))
}

pub fn load_grid(path: &Path) -> Result<ImageGrid, IoError> {
    let f = File::open(path).map_err(|e| file_err(path, e))?;
    read_grid(BufReader::new(f))
}

pub(crate) fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

/// Loads an 8-bit PNG as a grid of 0..255 samples. Grayscale stays 1 channel,
/// everything else becomes RGB (alpha dropped).
pub fn load_png(path: &Path) -> Result<ImageGrid, IoError> {
    let img = image::open(path).map_err(|e| IoError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = match img.color() {
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 => {
            let buf = img.to_luma8();
            ImageGrid::from_vec(h, w, 1, buf.into_raw().into_iter().map(f64::from).collect())?
        }
        _ => {
            let buf = img.to_rgb8();
            ImageGrid::from_vec(h, w, 3, buf.into_raw().into_iter().map(f64::from).collect())?
        }
    };
    Ok(grid)
}

/// Reads only the PNG header: (height, width).
pub fn png_dimensions(path: &Path) -> Result<(usize, usize), IoError> {
    let (w, h) = image::image_dimensions(path).map_err(|e| IoError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok((h as usize, w as usize))
}

/// Writes a 1- or 3-channel grid as PNG, clamping samples to 0..255.
pub fn save_png(path: &Path, grid: &ImageGrid) -> Result<(), IoError> {
    let (h, w, c) = grid.shape();
    let bytes: Vec<u8> = grid
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let color = match c {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        n => {
            return Err(IoError::Image {
                path: path.display().to_string(),
                message: format!("cannot encode {n}-channel grid as PNG"),
            })
        }
    };
    image::save_buffer(path, &bytes, w as u32, h as u32, color).map_err(|e| IoError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Affine-rescales each channel from `[lo, hi]` to 0..255 and writes a PNG.
pub fn save_png_scaled(path: &Path, grid: &ImageGrid, lo: f64, hi: f64) -> Result<(), IoError> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    save_png(path, &grid.map(|v| (v - lo) / span * 255.0))
}
