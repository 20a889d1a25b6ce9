//! Binary tensor archive.
//!
//! Layout (little endian): magic `TITN`, `u32` version, `u32` tensor count,
//! then per tensor a `u32` name length, UTF-8 name, `u32` rank, `u64` dims
//! and the `f32` payload.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::params::NamedTensor;

const MAGIC: &[u8; 4] = b"TITN";
const VERSION: u32 = 1;

pub fn write_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn encode<W: Write>(w: &mut W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<HashMap<String, NamedTensor>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    decode(&mut BufReader::new(file))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated file".into())
    } else {
        Error::Io(e)
    }
}

pub fn decode<R: Read>(r: &mut R) -> Result<HashMap<String, NamedTensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(r)?;
    let mut out = HashMap::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Checkpoint("dimension overflow".into()))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out.contains_key(&name) {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        out.insert(name.clone(), NamedTensor { name, shape, data });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let ts = vec![
            NamedTensor { name: "a".into(), shape: vec![2, 3], data: (0..6).map(|i| i as f32 * 0.5).collect() },
            NamedTensor { name: "s".into(), shape: vec![], data: vec![7.0] },
        ];
        let mut buf = Vec::new();
        encode(&mut buf, &ts).unwrap();
        let back = decode(&mut buf.as_slice()).unwrap();
        assert_eq!(back["a"], ts[0]);
        assert_eq!(back["s"], ts[1]);
    }

    #[test]
    fn rejects_truncation_and_magic() {
        let ts = vec![NamedTensor { name: "a".into(), shape: vec![4], data: vec![1.0; 4] }];
        let mut buf = Vec::new();
        encode(&mut buf, &ts).unwrap();
        assert!(decode(&mut &buf[..buf.len() - 2]).is_err());
        buf[0] = b'X';
        assert!(decode(&mut buf.as_slice()).is_err());
    }
}
