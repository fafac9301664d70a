//! Dense array files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `DHYF`                              |
//! | 2     | format version (1)                        |
//! | 1     | dtype code (1 = 64-bit IEEE float)        |
//! | 1     | number of dimensions `d`                  |
//! | 8·d   | dimensions, u64 each, outermost first     |
//! | 8·n   | row-major f64 values, little-endian       |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DHYF";
pub const ARRAY_FORMAT_VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseArray {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: data.len(),
            });
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::invalid("too many dimensions"));
        }
        Ok(Self { dims, data })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&ARRAY_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[DTYPE_F64, self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: &str| Error::malformed("dense array", reason);
        let mut head = [0u8; 8];
        r.read_exact(&mut head)
            .map_err(|_| bad("truncated header"))?;
        if &head[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != ARRAY_FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        if head[6] != DTYPE_F64 {
            return Err(bad(&format!("unsupported dtype code {}", head[6])));
        }
        let ndim = head[7] as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut buf = [0u8; 8];
        for _ in 0..ndim {
            r.read_exact(&mut buf).map_err(|_| bad("truncated dims"))?;
            dims.push(u64::from_le_bytes(buf) as usize);
        }
        let n: usize = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dimension overflow"))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|_| bad("unreadable payload"))?;
        if bytes.len() != n * 8 {
            return Err(bad(&format!(
                "payload holds {} bytes, expected {}",
                bytes.len(),
                n * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
