//! Named-block binary container for model files and checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "FLGM"            magic
//! u16               version (1)
//! u32               block count
//! per block:
//!   u16 + bytes     name, UTF-8
//!   u8              dtype: 0 f64, 1 i64, 2 UTF-8 text
//!   u32             rank
//!   u32 x rank      extents
//!   payload         8 bytes per element for numbers, raw bytes for text
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FLGM";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    F64 { dims: Vec<usize>, data: Vec<f64> },
    I64 { dims: Vec<usize>, data: Vec<i64> },
    Text(String),
}

impl Block {
    fn dtype(&self) -> u8 {
        match self {
            Block::F64 { .. } => 0,
            Block::I64 { .. } => 1,
            Block::Text(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    blocks: Vec<(String, Block)>,
}

fn missing(name: &str, kind: &str) -> Error {
    Error::Format {
        offset: 0,
        reason: format!("no {kind} block named {name:?}"),
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, block: Block) {
        self.blocks.push((name.into(), block));
    }

    pub fn push_f64(&mut self, name: impl Into<String>, dims: &[usize], data: Vec<f64>) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.push(name, Block::F64 { dims: dims.to_vec(), data });
    }

    pub fn push_i64(&mut self, name: impl Into<String>, data: Vec<i64>) {
        let dims = vec![data.len()];
        self.push(name, Block::I64 { dims, data });
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.push(name, Block::Text(text.into()));
    }

    pub fn get(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name) {
            Some(Block::F64 { dims, data }) => Ok((dims, data)),
            _ => Err(missing(name, "f64")),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<&[i64]> {
        match self.get(name) {
            Some(Block::I64 { data, .. }) => Ok(data),
            _ => Err(missing(name, "i64")),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Block::Text(s)) => Ok(s),
            _ => Err(missing(name, "text")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, block) in &self.blocks {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(block.dtype());
            let dims: Vec<usize> = match block {
                Block::F64 { dims, .. } | Block::I64 { dims, .. } => dims.clone(),
                Block::Text(s) => vec![s.len()],
            };
            buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in &dims {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            match block {
                Block::F64 { data, .. } => data.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
                Block::I64 { data, .. } => data.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
                Block::Text(s) => buf.extend_from_slice(s.as_bytes()),
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.fail(0, "bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(r.fail(4, format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut out = Container::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.fail(at, "block name is not UTF-8".into()))?
                .to_string();
            let dtype_at = r.pos;
            let dtype = r.take(1)?[0];
            let rank = u32::from_le_bytes(r.array()?) as usize;
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let n: usize = dims.iter().product();
            let block = match dtype {
                0 => Block::F64 {
                    data: r.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                    dims,
                },
                1 => Block::I64 {
                    data: r.take(n * 8)?.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect(),
                    dims,
                },
                2 => {
                    let at = r.pos;
                    Block::Text(
                        std::str::from_utf8(r.take(n)?)
                            .map_err(|_| r.fail(at, format!("block {name:?} is not UTF-8")))?
                            .to_string(),
                    )
                }
                other => return Err(r.fail(dtype_at, format!("unknown dtype {other} in block {name:?}"))),
            };
            out.blocks.push((name, block));
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn fail(&self, at: usize, reason: String) -> Error {
        Error::Format {
            offset: at as u64,
            reason,
        }
    }
}
