//! Binary checkpoint format for classifier parameters.
//!
//! Layout: 8-byte magic, format version (u32), the three layer sizes
//! (u32 each), then every tensor as little-endian f32 in declaration
//! order: w1, b1, bn1 gamma/beta/running mean/running variance, w2, b2,
//! bn2 likewise, w3, b3. Matrices are stored row-major.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::{BatchNormParams, MlpDims, MlpParams};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PIDFMLP\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes; not a classifier checkpoint")]
    BadMagic,
    #[error("checkpoint format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint header describes an invalid model shape")]
    BadHeader,
    #[error("checkpoint ends before all tensors were read")]
    Truncated,
    #[error("checkpoint has trailing bytes after the last tensor")]
    TrailingData,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f32_slice<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32_vec<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf).map_err(map_eof)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn map_eof(err: io::Error) -> CheckpointError {
    if err.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Truncated
    } else {
        CheckpointError::Io(err)
    }
}

/// Serializes `params` to `writer` in checkpoint layout.
pub fn write_checkpoint<W: Write>(params: &MlpParams, writer: &mut W) -> Result<(), CheckpointError> {
    writer.write_all(&CHECKPOINT_MAGIC)?;
    write_u32(writer, CHECKPOINT_VERSION)?;
    write_u32(writer, params.dims.input as u32)?;
    write_u32(writer, params.dims.hidden as u32)?;
    write_u32(writer, params.dims.classes as u32)?;
    for tensor in tensor_order(params) {
        write_f32_slice(writer, tensor)?;
    }
    Ok(())
}

fn tensor_order(params: &MlpParams) -> Vec<&[f64]> {
    vec![
        params.w1.as_slice().expect("standard layout"),
        params.b1.as_slice().expect("standard layout"),
        params.bn1.gamma.as_slice().expect("standard layout"),
        params.bn1.beta.as_slice().expect("standard layout"),
        params.bn1.running_mean.as_slice().expect("standard layout"),
        params.bn1.running_var.as_slice().expect("standard layout"),
        params.w2.as_slice().expect("standard layout"),
        params.b2.as_slice().expect("standard layout"),
        params.bn2.gamma.as_slice().expect("standard layout"),
        params.bn2.beta.as_slice().expect("standard layout"),
        params.bn2.running_mean.as_slice().expect("standard layout"),
        params.bn2.running_var.as_slice().expect("standard layout"),
        params.w3.as_slice().expect("standard layout"),
        params.b3.as_slice().expect("standard layout"),
    ]
}

/// Deserializes a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(reader: &mut R) -> Result<MlpParams, CheckpointError> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(map_eof)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(reader)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let input = read_u32(reader)? as usize;
    let hidden = read_u32(reader)? as usize;
    let classes = read_u32(reader)? as usize;
    let dims = MlpDims::new(input, hidden, classes).map_err(|_| CheckpointError::BadHeader)?;

    let mat = |r: &mut R, rows: usize, cols: usize| -> Result<Array2<f64>, CheckpointError> {
        Ok(Array2::from_shape_vec((rows, cols), read_f32_vec(r, rows * cols)?)
            .expect("shape matches data length"))
    };
    let vec1 = |r: &mut R, len: usize| -> Result<Array1<f64>, CheckpointError> {
        Ok(Array1::from_vec(read_f32_vec(r, len)?))
    };
    let bn = |r: &mut R, width: usize| -> Result<BatchNormParams, CheckpointError> {
        Ok(BatchNormParams {
            gamma: vec1(r, width)?,
            beta: vec1(r, width)?,
            running_mean: vec1(r, width)?,
            running_var: vec1(r, width)?,
        })
    };

    let w1 = mat(reader, input, hidden)?;
    let b1 = vec1(reader, hidden)?;
    let bn1 = bn(reader, hidden)?;
    let w2 = mat(reader, hidden, hidden)?;
    let b2 = vec1(reader, hidden)?;
    let bn2 = bn(reader, hidden)?;
    let w3 = mat(reader, hidden, classes)?;
    let b3 = vec1(reader, classes)?;

    Ok(MlpParams {
        dims,
        w1,
        b1,
        bn1,
        w2,
        b2,
        bn2,
        w3,
        b3,
    })
}

/// Writes a checkpoint file at `path`.
pub fn save_checkpoint<P: AsRef<Path>>(params: &MlpParams, path: P) -> Result<(), CheckpointError> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut writer)?;
    writer.flush()?;
    Ok(())
}

/// Reads a checkpoint file from `path`.
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<MlpParams, CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    let params = read_checkpoint(&mut reader)?;
    let mut rest = [0u8; 1];
    match reader.read(&mut rest)? {
        0 => Ok(params),
        _ => Err(CheckpointError::TrailingData),
    }
}
