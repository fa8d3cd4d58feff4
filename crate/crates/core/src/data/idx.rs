//! Reader and writer for the IDX format (big-endian, unsigned byte data).

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Parsed IDX payload: dimensions and raw bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let b = bytes.get(offset..offset + 4).ok_or_else(|| Error::Format {
        offset: bytes.len() as u64,
        detail: format!("truncated while reading {what} (needs bytes {offset}..{})", offset + 4),
    })?;
    Ok(u32::from_be_bytes(b.try_into().expect("four bytes")))
}

/// Parses an IDX buffer whose magic number must equal `magic`.
pub fn parse(bytes: &[u8], magic: u32) -> Result<IdxArray> {
    let found = read_u32(bytes, 0, "magic number")?;
    if found != magic {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad magic number {found:#010x}, expected {magic:#010x}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|d| read_u32(bytes, 4 + 4 * d, &format!("dimension {d}")).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    if bytes.len() < header + len {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("truncated data: expected {} bytes in total, file ends early", header + len),
        });
    }
    if bytes.len() > header + len {
        return Err(Error::Format {
            offset: (header + len) as u64,
            detail: format!("{} trailing bytes after data", bytes.len() - header - len),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode(magic: u32, arr: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * arr.dims.len() + arr.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}
