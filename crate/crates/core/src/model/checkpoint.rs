//! Versioned binary checkpoint format.
//!
//! ```text
//! magic         8 bytes   "SSMCKPT\0"
//! version       u32 LE
//! header_len    u32 LE
//! header        header_len bytes of UTF-8 "key=value\n" lines
//! block_count   u32 LE
//! block*        name_len u32 LE, name (UTF-8), ndim u32 LE, ndim x u64 LE dims,
//!               prod(dims) x f64 LE values (row-major)
//! ```
//!
//! Header values are written with Rust's shortest round-trip float formatting,
//! so reading a checkpoint restores every scalar bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "block '{name}' has shape {shape:?} but {} values",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub blocks: Vec<ParamBlock>,
}

impl Checkpoint {
    pub fn push_header(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .header_value(key)
            .ok_or_else(|| Error::Format(format!("missing header key '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("header key '{key}' has invalid value '{raw}'")))
    }

    pub fn block(&self, name: &str) -> Result<&ParamBlock> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("missing parameter block '{name}'")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::new();
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("header entry '{k}' cannot be encoded")));
            }
            header.push_str(k);
            header.push('=');
            header.push_str(v);
            header.push('\n');
        }
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&u32_len(header.len())?.to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        w.write_all(&u32_len(self.blocks.len())?.to_le_bytes())?;
        for block in &self.blocks {
            w.write_all(&u32_len(block.name.len())?.to_le_bytes())?;
            w.write_all(block.name.as_bytes())?;
            w.write_all(&u32_len(block.shape.len())?.to_le_bytes())?;
            for &dim in &block.shape {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
            for v in &block.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes).map_err(truncated)?;
        let header_text = String::from_utf8(header_bytes)
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let mut header = Vec::new();
        for line in header_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed header line '{line}'")))?;
            header.push((k.to_string(), v.to_string()));
        }
        let count = read_u32(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name =
                String::from_utf8(name).map_err(|_| Error::Format("block name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf).map_err(truncated)?;
                shape.push(u64::from_le_bytes(buf) as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("block '{name}' shape overflows")))?;
            let mut raw = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::Format("block too large".into()))?];
            r.read_exact(&mut raw).map_err(truncated)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            blocks.push(ParamBlock { name, shape, data });
        }
        Ok(Self { header, blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::read_from(BufReader::new(file))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} exceeds u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}
