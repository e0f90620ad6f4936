//! `RNET` model files.
//!
//! Layout (little-endian): magic `RNET`, `u16` version, then `u32` input side,
//! input channels, classes and stage count, then per stage `u32` n_in, n_out,
//! kernel, pool. Then `f64` activation beta and `u64` init seed. Parameters
//! follow as `f64`: per stage kernels in (i, j, row, col) order then biases,
//! then output weights (class-major) and output biases.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::network::{NetworkState, ParamSet};
use super::spec::{ActivationSpec, ConvLayerSpec, NetworkSpec, PoolLayerSpec, Stage};
use crate::io::{file_err, IoError};

pub const MODEL_MAGIC: &[u8; 4] = b"RNET";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("model file is malformed: {0}")]
    Malformed(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(IoError::Io(e))
    }
}

pub fn write_model<W: Write>(mut w: W, spec: &NetworkSpec, state: &NetworkState) -> Result<(), ModelError> {
    w.write_all(MODEL_MAGIC)?;
    w.write_u16::<LittleEndian>(MODEL_VERSION)?;
    let header = [
        spec.input_side,
        spec.input_channels,
        spec.classes,
        spec.stages.len(),
    ];
    for v in header {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    for st in &spec.stages {
        for v in [st.conv.n_in, st.conv.n_out, st.conv.kernel, st.pool.n] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
    }
    w.write_f64::<LittleEndian>(spec.activation.beta)?;
    w.write_u64::<LittleEndian>(state.seed)?;
    for slice in state.params.slices() {
        for &v in slice {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<(NetworkSpec, NetworkState), ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(IoError::BadMagic { expected: "RNET" }.into());
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != MODEL_VERSION {
        return Err(IoError::BadVersion(version).into());
    }
    let mut u32s = |n: usize| -> Result<Vec<usize>, ModelError> {
        (0..n)
            .map(|_| Ok(r.read_u32::<LittleEndian>()? as usize))
            .collect()
    };
    let head = u32s(4)?;
    let (side, channels, classes, n_stages) = (head[0], head[1], head[2], head[3]);
    if n_stages > 64 {
        return Err(ModelError::Malformed(format!("{n_stages} stages")));
    }
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        let v = u32s(4)?;
        stages.push(Stage {
            conv: ConvLayerSpec {
                n_in: v[0],
                n_out: v[1],
                kernel: v[2],
            },
            pool: PoolLayerSpec { n: v[3] },
        });
    }
    let beta = r.read_f64::<LittleEndian>()?;
    let seed = r.read_u64::<LittleEndian>()?;
    let spec = NetworkSpec {
        input_side: side,
        input_channels: channels,
        stages,
        classes,
        activation: ActivationSpec { beta },
    };
    let mut params = ParamSet::zeros(&spec).map_err(|e| ModelError::Malformed(e.to_string()))?;
    for slice in params.slices_mut() {
        r.read_f64_into::<LittleEndian>(slice)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ModelError::Malformed("trailing bytes".into()));
    }
    if !params.all_finite() {
        return Err(ModelError::Malformed("non-finite parameter".into()));
    }
    Ok((spec, NetworkState { params, seed }))
}

pub fn save_model(path: &Path, spec: &NetworkSpec, state: &NetworkState) -> Result<(), ModelError> {
    let f = File::create(path).map_err(|e| file_err(path, e))?;
    let mut w = BufWriter::new(f);
    write_model(&mut w, spec, state)?;
    w.flush().map_err(|e| file_err(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(NetworkSpec, NetworkState), ModelError> {
    let f = File::open(path).map_err(|e| file_err(path, e))?;
    read_model(BufReader::new(f))
}
