//! Binary checkpoint format.
//!
//! Layout: the magic string `TNMTCKPT`, a little-endian `u32` format
//! version, then a sequence of records until end of file. Each record is
//! `name_len: u32 | name: utf8 | dtype: u8 | rank: u32 | dims: u64 x rank |
//! buffer: little-endian elements`. Dtype tags: 0 = f32, 1 = f64, 2 = u8
//! (u8 records carry serialized metadata such as vocabularies).

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::{CheckpointError, Dtype, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"TNMTCKPT";
pub const VERSION: u32 = 1;

type Result<T> = std::result::Result<T, CheckpointError>;

/// One decoded checkpoint record.
#[derive(Debug, Clone)]
pub enum Payload {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    Bytes(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> Dtype {
        match self {
            Payload::F32(_) => Dtype::F32,
            Payload::F64(_) => Dtype::F64,
            Payload::Bytes(_) => Dtype::U8,
        }
    }
}

pub struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    pub fn new(mut out: W) -> Result<Self> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        Ok(Writer { out })
    }

    fn header(&mut self, name: &str, dtype: Dtype, dims: &[usize]) -> Result<()> {
        self.out
            .write_all(&(name.len() as u32).to_le_bytes())?;
        self.out.write_all(name.as_bytes())?;
        self.out.write_all(&[dtype.tag()])?;
        self.out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            self.out.write_all(&(d as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn tensor<F: Scalar>(&mut self, name: &str, t: &Tensor<F>) -> Result<()> {
        self.header(name, F::DTYPE, t.shape())?;
        let mut buf = Vec::with_capacity(t.numel() * F::DTYPE.size());
        for &x in t.data() {
            x.write_le(&mut buf);
        }
        self.out.write_all(&buf)?;
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        self.header(name, Dtype::U8, &[data.len()])?;
        self.out.write_all(data)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Read every record; order is preserved in the returned vector.
pub fn read_records<R: Read>(mut input: R) -> Result<Vec<(String, Payload)>> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    if data.len() < MAGIC.len() + 4 || &data[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(data[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }

    let mut pos = 12;
    let mut records = Vec::new();
    while pos < data.len() {
        let name_len = read_u32(&data, &mut pos)? as usize;
        let name_bytes = take(&data, &mut pos, name_len)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let tag = take(&data, &mut pos, 1)?[0];
        let dtype = Dtype::from_tag(tag).ok_or(CheckpointError::UnknownDtype(tag))?;
        let rank = read_u32(&data, &mut pos)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&data, &mut pos)? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = take(&data, &mut pos, numel * dtype.size())?;
        let payload = match dtype {
            Dtype::F32 => Payload::F32(decode_tensor::<f32>(dims, raw)),
            Dtype::F64 => Payload::F64(decode_tensor::<f64>(dims, raw)),
            Dtype::U8 => Payload::Bytes(raw.to_vec()),
        };
        records.push((name, payload));
    }
    Ok(records)
}

/// Records keyed by name, for loaders that look entries up.
pub fn read_map<R: Read>(input: R) -> Result<HashMap<String, Payload>> {
    Ok(read_records(input)?.into_iter().collect())
}

/// Extract a float tensor of the precision the caller is running at.
pub fn require_tensor<F: Scalar>(
    map: &HashMap<String, Payload>,
    name: &str,
) -> Result<Tensor<F>> {
    let payload = map
        .get(name)
        .ok_or_else(|| CheckpointError::MissingRecord(name.to_string()))?;
    let tensor = match (payload, F::DTYPE) {
        (Payload::F32(t), Dtype::F32) => reencode(t),
        (Payload::F64(t), Dtype::F64) => reencode(t),
        _ => {
            return Err(CheckpointError::DtypeMismatch {
                name: name.to_string(),
                found: payload.dtype(),
                expected: F::DTYPE,
            })
        }
    };
    Ok(tensor)
}

pub fn require_bytes(map: &HashMap<String, Payload>, name: &str) -> Result<Vec<u8>> {
    match map.get(name) {
        Some(Payload::Bytes(b)) => Ok(b.clone()),
        Some(other) => Err(CheckpointError::DtypeMismatch {
            name: name.to_string(),
            found: other.dtype(),
            expected: Dtype::U8,
        }),
        None => Err(CheckpointError::MissingRecord(name.to_string())),
    }
}

fn reencode<A: Scalar, B: Scalar>(t: &Tensor<A>) -> Tensor<B> {
    // Only called with A == B; goes through f64 to satisfy the types.
    let data = t.data().iter().map(|&x| B::from_f64(x.to_f64())).collect();
    Tensor::from_vec(t.shape().to_vec(), data).expect("shape preserved")
}

fn decode_tensor<F: Scalar>(dims: Vec<usize>, raw: &[u8]) -> Tensor<F> {
    let size = F::DTYPE.size();
    let data: Vec<F> = raw.chunks_exact(size).map(F::read_le).collect();
    Tensor::from_vec(dims, data).expect("length checked by caller")
}

fn read_u32(data: &[u8], pos: &mut usize) -> Result<u32> {
    let b = take(data, pos, 4)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn read_u64(data: &[u8], pos: &mut usize) -> Result<u64> {
    let b = take(data, pos, 8)?;
    Ok(u64::from_le_bytes(b.try_into().unwrap()))
}

fn take<'a>(data: &'a [u8], pos: &mut usize, len: usize) -> Result<&'a [u8]> {
    if *pos + len > data.len() {
        return Err(CheckpointError::Truncated);
    }
    let slice = &data[*pos..*pos + len];
    *pos += len;
    Ok(slice)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_tensors_and_bytes() {
        let mut buf = Vec::new();
        let t32 = Tensor::<f32>::matrix(2, 2, vec![1.0, -2.5, 3.25, 0.0]).unwrap();
        let t64 = Tensor::<f64>::vector(vec![0.1, 0.2]);
        {
            let mut w = Writer::new(&mut buf).unwrap();
            w.tensor("a.w", &t32).unwrap();
            w.tensor("b", &t64).unwrap();
            w.bytes("meta", b"hello").unwrap();
            w.finish().unwrap();
        }
        let map = read_map(&buf[..]).unwrap();
        assert_eq!(require_tensor::<f32>(&map, "a.w").unwrap(), t32);
        assert_eq!(require_tensor::<f64>(&map, "b").unwrap(), t64);
        assert_eq!(require_bytes(&map, "meta").unwrap(), b"hello");
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_records(&b"NOTCKPT0\x01\x00\x00\x00"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let mut buf = Vec::new();
        {
            let mut w = Writer::new(&mut buf).unwrap();
            w.bytes("m", b"abcdef").unwrap();
            w.finish().unwrap();
        }
        buf.truncate(buf.len() - 2);
        assert!(matches!(
            read_records(&buf[..]),
            Err(CheckpointError::Truncated)
        ));
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let mut buf = Vec::new();
        {
            let mut w = Writer::new(&mut buf).unwrap();
            w.tensor("w", &Tensor::<f32>::scalar(1.0)).unwrap();
            w.finish().unwrap();
        }
        let map = read_map(&buf[..]).unwrap();
        assert!(matches!(
            require_tensor::<f64>(&map, "w"),
            Err(CheckpointError::DtypeMismatch { .. })
        ));
    }
}
