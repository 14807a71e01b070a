//! Named-array container used for weight blobs and dataset exports.
//!
//! Layout: 4 magic bytes, `u16` format version, then until end of input,
//! per array: `u16` name length, name bytes (UTF-8), `u8` rank, one `u32`
//! per dimension, and the elements as `f32`. All integers and floats are
//! little-endian.

use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"EVOW";
pub const DATASET_MAGIC: [u8; 4] = *b"EVOD";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(magic: [u8; 4], arrays: &[NamedArray]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for a in arrays {
        assert_eq!(a.dims.iter().product::<usize>(), a.data.len(), "{}", a.name);
        out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.push(a.dims.len() as u8);
        for &d in &a.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated array container at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn decode(magic: [u8; 4], bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != magic {
        return Err(Error::Format(format!(
            "bad magic, expected {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let mut arrays = Vec::new();
    while r.pos < bytes.len() {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = r.take(count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        arrays.push(NamedArray { name, dims, data });
    }
    Ok(arrays)
}
