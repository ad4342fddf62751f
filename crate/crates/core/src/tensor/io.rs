use std::io::{Read, Write};
use std::path::Path;

use super::{DType, Element, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TQT1";

/// A tensor whose element type is only known at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    I8(Tensor<i8>),
    I32(Tensor<i32>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::I8(_) => DType::I8,
            AnyTensor::I32(_) => DType::I32,
        }
    }

    pub fn into_f32(self) -> Result<Tensor<f32>> {
        match self {
            AnyTensor::F32(t) => Ok(t),
            other => Err(Error::Format(format!(
                "expected f32 tensor, found {:?}",
                other.dtype()
            ))),
        }
    }

    pub fn into_i8(self) -> Result<Tensor<i8>> {
        match self {
            AnyTensor::I8(t) => Ok(t),
            other => Err(Error::Format(format!(
                "expected i8 tensor, found {:?}",
                other.dtype()
            ))),
        }
    }
}

pub fn write_tensor<T: Element, W: Write>(t: &Tensor<T>, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(9 + 4 * t.rank() + T::SIZE * t.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.push(T::DTYPE as u8);
    for &x in t.data() {
        x.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn decode<T: Element>(shape: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    if payload.len() != n * T::SIZE {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            n * T::SIZE
        )));
    }
    let data = payload.chunks_exact(T::SIZE).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing TQT1 magic".into()));
    }
    let u32_at = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| Error::Format("truncated header".into()))
    };
    let rank = u32_at(4)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u32_at(8 + 4 * i)? as usize);
    }
    let code_at = 8 + 4 * rank;
    let code = *bytes
        .get(code_at)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let payload = &bytes[code_at + 1..];
    match DType::from_code(code) {
        Some(DType::F32) => decode(shape, payload).map(AnyTensor::F32),
        Some(DType::I8) => decode(shape, payload).map(AnyTensor::I8),
        Some(DType::I32) => decode(shape, payload).map(AnyTensor::I32),
        None => Err(Error::Format(format!("unknown dtype code {code}"))),
    }
}

pub fn write_tensor_file<T: Element>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_tensor(t, std::io::BufWriter::new(f))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let f = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(f))
}
