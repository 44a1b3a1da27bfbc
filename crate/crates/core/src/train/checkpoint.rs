//! Checkpoint files.
//!
//! Layout (little-endian): magic `CFIP`, u16 version, u32-length-prefixed
//! UTF-8 `key=value` config echo, then four sections (parameters, first
//! moments, second moments, EMA shadows). Each section is a u32 record count
//! followed by records: u32 name length, name, u8 rank, u32 extents, f32 data.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::kv;
use crate::tensor::{ParamStore, Tensor};

use super::optim::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CFIP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("parameter {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("parameter {0} missing from checkpoint")]
    Missing(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated
        } else {
            CheckpointError::Io(e)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Ordered `key=value` echo of the run configuration.
    pub config: Vec<(String, String)>,
    pub params: ParamStore<f32>,
    pub adam: AdamState,
    pub ema: ParamStore<f32>,
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// EMA shadows where present, raw parameters otherwise.
    pub fn weights(&self, ema: bool) -> ParamStore<f32> {
        let mut out = self.params.clone();
        if ema {
            for (name, t) in self.ema.iter() {
                if out.contains(name) {
                    out.insert(name.clone(), t.clone());
                }
            }
        }
        out
    }

    /// Fails unless every parameter of `expected` is present with the same shape.
    pub fn check_against(&self, expected: &ParamStore<f32>) -> Result<(), CheckpointError> {
        for (name, t) in expected.iter() {
            let found = self.params.get(name).map_err(|_| CheckpointError::Missing(name.clone()))?;
            if found.shape() != t.shape() {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    found: found.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let mut echo = self.config.clone();
        echo.retain(|(k, _)| k != "step");
        echo.push(("step".into(), self.adam.step.to_string()));
        let text = kv::render(echo);
        buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
        for section in [&self.params, &self.adam.first, &self.adam.second, &self.ema] {
            write_section(&mut buf, section);
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = u16::from_le_bytes(read_n(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = u32::from_le_bytes(read_n(&mut r)?) as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut config = kv::parse(&text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let step = match config.iter().position(|(k, _)| k == "step") {
            Some(i) => {
                let (_, v) = config.remove(i);
                v.parse().map_err(|_| CheckpointError::Malformed(format!("step={v}")))?
            }
            None => 0,
        };
        let params = read_section(&mut r)?;
        let first = read_section(&mut r)?;
        let second = read_section(&mut r)?;
        let ema = read_section(&mut r)?;
        Ok(Self { config, params, adam: AdamState { first, second, step }, ema })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_n<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn write_section(buf: &mut Vec<u8>, store: &ParamStore<f32>) {
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape().len() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_section<R: Read>(r: &mut R) -> Result<ParamStore<f32>, CheckpointError> {
    let count = u32::from_le_bytes(read_n(r)?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(read_n(r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let [rank] = read_n::<1, _>(r)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_n(r)?) as usize);
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        store.insert(name, t);
    }
    Ok(store)
}
