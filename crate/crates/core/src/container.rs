//! Versioned binary container shared by model checkpoints and datasets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      b"RKTC"
//! version    u32
//! kind       u8          1 = checkpoint, 2 = dataset
//! header     u32 length + UTF-8 JSON
//! records    u32 count, then per record:
//!            u8 tag, u32 name length + UTF-8 name,
//!            u32 ndim, ndim × u32 dims, numel × f32 payload
//! crc32      u32 over every preceding byte
//! ```

use crate::error::{ContainerError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RKTC";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ContainerKind {
    Checkpoint = 1,
    Dataset = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub tag: u8,
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub header: String,
    pub records: Vec<Record>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        buf.push(self.kind as u8);
        put_u32(&mut buf, self.header.len() as u32);
        buf.extend_from_slice(self.header.as_bytes());
        put_u32(&mut buf, self.records.len() as u32);
        for r in &self.records {
            buf.push(r.tag);
            put_u32(&mut buf, r.name.len() as u32);
            buf.extend_from_slice(r.name.as_bytes());
            put_u32(&mut buf, r.tensor.ndim() as u32);
            for &d in r.tensor.shape() {
                put_u32(&mut buf, d as u32);
            }
            for &v in r.tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        put_u32(&mut buf, crc);
        buf
    }

    pub fn from_bytes(bytes: &[u8], expect: ContainerKind) -> Result<Container> {
        const FIXED: usize = 4 + 4 + 1 + 4 + 4 + 4;
        if bytes.len() < 4 {
            return Err(ContainerError::Truncated(bytes.len()).into());
        }
        if &bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic.into());
        }
        if bytes.len() < FIXED {
            return Err(ContainerError::Truncated(bytes.len()).into());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(ContainerError::Checksum { stored, computed }.into());
        }
        let mut rd = Reader { bytes: body, pos: 4 };
        let version = rd.u32()?;
        if version != VERSION {
            return Err(ContainerError::VersionMismatch { found: version, expected: VERSION }.into());
        }
        let kind = rd.u8()?;
        if kind != expect as u8 {
            return Err(ContainerError::KindMismatch { found: kind, expected: expect as u8 }.into());
        }
        let header = rd.string()?;
        let count = rd.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let tag = rd.u8()?;
            let name = rd.string()?;
            let ndim = rd.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(rd.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = rd.take(numel.checked_mul(4).ok_or_else(|| malformed("payload size overflow"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| malformed(&format!("record `{name}`: {e}")))?;
            records.push(Record { tag, name, tensor });
        }
        if rd.pos != body.len() {
            return Err(malformed("trailing bytes after records").into());
        }
        Ok(Container { kind: expect, header, records })
    }
}

fn malformed(msg: &str) -> ContainerError {
    ContainerError::Malformed(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.bytes.len() - self.pos < n {
            return Err(ContainerError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ContainerError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("invalid UTF-8"))
    }
}
