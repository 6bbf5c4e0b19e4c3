//! Versioned binary container: a JSON header followed by named float64 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes
//! version    u32
//! header     u64 length + UTF-8 JSON
//! count      u32
//! tensor*    u32 name length, name, u32 rank, u64 dims[rank], f64 values (row-major)
//! ```

use std::io::{Read, Write};

use serde_json::Value;

use crate::error::{NnError, Result};

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            values,
        }
    }
}

pub fn write_container<W: Write>(
    w: &mut W,
    magic: &[u8; 8],
    header: &Value,
    tensors: &[TensorRecord],
) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.values.len() {
            return Err(NnError::Checkpoint(format!(
                "tensor {} has {} values for shape {:?}",
                t.name,
                t.values.len(),
                t.shape
            )));
        }
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_container<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<(Value, Vec<TensorRecord>)> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(NnError::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != CONTAINER_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported container version {version}")));
    }
    let len = read_u64(r)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Value = serde_json::from_slice(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let count = read_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        tensors.push(TensorRecord { name, shape, values });
    }
    Ok((header, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn container_round_trips(rows in 0usize..4, cols in 0usize..5, seed in any::<u64>()) {
            let values: Vec<f64> = (0..rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) % 1000) as f64 / 7.0 - 50.0).collect();
            let tensors = vec![
                TensorRecord::new("a", vec![rows, cols], values),
                TensorRecord::new("scalar", vec![], vec![f64::MIN_POSITIVE]),
            ];
            let header = serde_json::json!({"kind": "test", "n": rows});
            let mut buf = Vec::new();
            write_container(&mut buf, b"TESTCONT", &header, &tensors).unwrap();
            let (h, t) = read_container(&mut buf.as_slice(), b"TESTCONT").unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(t, tensors);
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut buf = Vec::new();
        write_container(&mut buf, b"AAAAAAAA", &Value::Null, &[]).unwrap();
        assert!(read_container(&mut buf.as_slice(), b"BBBBBBBB").is_err());
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let mut buf = Vec::new();
        write_container(&mut buf, b"AAAAAAAA", &Value::Null, &[TensorRecord::new("x", vec![3], vec![1.0, 2.0, 3.0])]).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(matches!(read_container(&mut buf.as_slice(), b"AAAAAAAA"), Err(NnError::Io(_))));
    }
}
