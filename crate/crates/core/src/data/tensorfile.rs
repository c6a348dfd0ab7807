//! `HTVT` binary tensors: magic, version, dtype, ndim, u64 dims, row-major
//! little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HTVT";
pub const VERSION: u8 = 1;
const MAX_DIMS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::I64(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn dtype_size(code: u8) -> Option<usize> {
    match code {
        0 => Some(4),
        1 | 2 => Some(8),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() || dims.len() > MAX_DIMS {
            return Err(Error::Dimension(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 8 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.data.dtype_code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, message: String| Error::Format {
            offset: offset as u64,
            message,
        };
        if bytes.len() < 7 {
            return Err(fail(
                bytes.len(),
                format!("header needs 7 bytes, file has {}", bytes.len()),
            ));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail(
                0,
                format!("bad magic {:?}, expected \"HTVT\"", &bytes[..4]),
            ));
        }
        if bytes[4] != VERSION {
            return Err(fail(4, format!("unsupported version {}", bytes[4])));
        }
        let dtype = bytes[5];
        let size =
            dtype_size(dtype).ok_or_else(|| fail(5, format!("unknown dtype code {dtype}")))?;
        let ndim = bytes[6] as usize;
        if ndim > MAX_DIMS {
            return Err(fail(6, format!("ndim {ndim} exceeds {MAX_DIMS}")));
        }
        let header = 7 + 8 * ndim;
        if bytes.len() < header {
            return Err(fail(
                bytes.len(),
                format!(
                    "header needs {header} bytes for {ndim} dims, file has {}",
                    bytes.len()
                ),
            ));
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for i in 0..ndim {
            let at = 7 + 8 * i;
            let d = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            let d = usize::try_from(d)
                .map_err(|_| fail(at, format!("dimension {d} does not fit in memory")))?;
            count = count
                .checked_mul(d)
                .ok_or_else(|| fail(at, "element count overflows".into()))?;
            dims.push(d);
        }
        let expected = count
            .checked_mul(size)
            .ok_or_else(|| fail(header, "payload size overflows".into()))?;
        let payload = &bytes[header..];
        if payload.len() != expected {
            return Err(fail(
                header,
                format!("payload has {} bytes, expected {expected}", payload.len()),
            ));
        }
        let data = match dtype {
            0 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => TensorData::I64(
                payload
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Reads an f64 (or f32, widened) tensor.
pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let f = TensorFile::read(path)?;
    let data = match f.data {
        TensorData::F64(v) => v,
        TensorData::F32(v) => v.into_iter().map(f64::from).collect(),
        TensorData::I64(_) => {
            return Err(Error::Format {
                offset: 5,
                message: format!("{} holds integers, expected floating point", path.display()),
            })
        }
    };
    Tensor::new(f.dims, data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    TensorFile::new(t.shape().to_vec(), TensorData::F64(t.data().to_vec()))?.write(path)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let f = TensorFile::read(path)?;
    match f.data {
        TensorData::I64(v) if f.dims.len() == 1 => v
            .into_iter()
            .map(|y| {
                usize::try_from(y).map_err(|_| Error::Format {
                    offset: 7,
                    message: format!("negative label {y}"),
                })
            })
            .collect(),
        _ => Err(Error::Format {
            offset: 5,
            message: format!("{} is not a 1-D i64 label vector", path.display()),
        }),
    }
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    TensorFile::new(
        vec![labels.len()],
        TensorData::I64(labels.iter().map(|&y| y as i64).collect()),
    )?
    .write(path)
}
