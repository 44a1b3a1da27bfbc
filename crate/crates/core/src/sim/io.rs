//! Binary dataset files.
//!
//! Layout (little-endian): magic `SCMD`, u16 version, u32 n, u16 d, u8 flags
//! (bit0 noise present, bit1 standardized), `d×d` u8 parent matrix (row `i`
//! lists the parents of `i`), `n×d` f64 observations, optional `n×d` f64
//! noise, then a u32-length-prefixed UTF-8 block of `key=value` lines.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::Array2;
use thiserror::Error;

use super::dataset::{Dataset, DatasetMeta, Standardization};
use super::mechanism::MechanismKind;
use super::scm::DistributionTag;
use super::{Dag, SimError};

pub const DATASET_MAGIC: &[u8; 4] = b"SCMD";
pub const DATASET_VERSION: u16 = 1;

const FLAG_NOISE: u8 = 1;
const FLAG_STANDARDIZED: u8 = 2;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("truncated payload")]
    Truncated,
    #[error("invalid graph: {0}")]
    Graph(#[from] SimError),
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for FormatError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FormatError::Truncated
        } else {
            FormatError::Io(e)
        }
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<f64>, FormatError> {
    s.split(',')
        .map(|v| v.parse::<f64>().map_err(|e| FormatError::Metadata(format!("{v}: {e}"))))
        .collect()
}

fn encode_meta(meta: &DatasetMeta) -> String {
    let mut lines = vec![format!("generator={}", meta.generator), format!("seed={}", meta.seed)];
    if let Some(t) = meta.distribution {
        lines.push(format!("preset={}", t.tag()));
    }
    if let Some(m) = meta.mechanism {
        lines.push(format!("mechanism={}", m.tag()));
    }
    lines.push(format!("row_start={}", meta.row_start));
    if let Some(st) = &meta.standardization {
        lines.push(format!("std_mean={}", join(&st.mean)));
        lines.push(format!("std_scale={}", join(&st.scale)));
    }
    for (k, v) in &meta.extra {
        lines.push(format!("{k}={v}"));
    }
    lines.join("\n")
}

fn decode_meta(text: &str) -> Result<DatasetMeta, FormatError> {
    let mut meta = DatasetMeta::default();
    let (mut mean, mut scale) = (None, None);
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::Metadata(format!("line without `=`: {line}")))?;
        match k {
            "generator" => meta.generator = v.to_string(),
            "seed" => meta.seed = v.parse().map_err(|_| FormatError::Metadata(format!("seed {v}")))?,
            "preset" => {
                meta.distribution =
                    Some(DistributionTag::from_tag(v).ok_or_else(|| FormatError::Metadata(format!("preset {v}")))?)
            }
            "mechanism" => {
                meta.mechanism =
                    Some(MechanismKind::from_tag(v).ok_or_else(|| FormatError::Metadata(format!("mechanism {v}")))?)
            }
            "row_start" => {
                meta.row_start = v.parse().map_err(|_| FormatError::Metadata(format!("row_start {v}")))?
            }
            "std_mean" => mean = Some(parse_list(v)?),
            "std_scale" => scale = Some(parse_list(v)?),
            _ => {
                meta.extra.insert(k.to_string(), v.to_string());
            }
        }
    }
    match (mean, scale) {
        (Some(mean), Some(scale)) if mean.len() == scale.len() => {
            meta.standardization = Some(Standardization { mean, scale })
        }
        (None, None) => {}
        _ => return Err(FormatError::Metadata("incomplete standardization statistics".into())),
    }
    Ok(meta)
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<(), FormatError> {
    let (n, d) = (ds.n(), ds.d());
    let n32 = u32::try_from(n).map_err(|_| FormatError::Metadata("too many rows".into()))?;
    let d16 = u16::try_from(d).map_err(|_| FormatError::Metadata("too many nodes".into()))?;
    let mut buf = Vec::with_capacity(16 + d * d + 16 * n * d);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&n32.to_le_bytes());
    buf.extend_from_slice(&d16.to_le_bytes());
    let mut flags = 0;
    if ds.noise.is_some() {
        flags |= FLAG_NOISE;
    }
    if ds.is_standardized() {
        flags |= FLAG_STANDARDIZED;
    }
    buf.push(flags);
    buf.extend(ds.dag.parent_matrix().iter().map(|&p| p as u8));
    for v in ds.x.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(noise) = &ds.noise {
        for v in noise.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = encode_meta(&ds.meta);
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    w.write_all(&buf)?;
    Ok(())
}

fn read_array<R: Read>(r: &mut R, n: usize, d: usize) -> Result<Array2<f64>, FormatError> {
    let mut raw = vec![0u8; n * d * 8];
    r.read_exact(&mut raw)?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Array2::from_shape_vec((n, d), values).expect("sized buffer"))
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let mut b2 = [0u8; 2];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != DATASET_VERSION {
        return Err(FormatError::Version(version));
    }
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b2)?;
    let d = u16::from_le_bytes(b2) as usize;
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)?;
    let flags = flags[0];
    let mut adj = vec![0u8; d * d];
    r.read_exact(&mut adj)?;
    if adj.iter().any(|&b| b > 1) {
        return Err(FormatError::Metadata("adjacency entries must be 0 or 1".into()));
    }
    let dag = Dag::from_parent_matrix(d, adj.iter().map(|&b| b == 1).collect())?;
    let x = read_array(&mut r, n, d)?;
    let noise = if flags & FLAG_NOISE != 0 { Some(read_array(&mut r, n, d)?) } else { None };
    r.read_exact(&mut b4)?;
    let len = u32::from_le_bytes(b4) as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|e| FormatError::Metadata(e.to_string()))?;
    let meta = decode_meta(&text)?;
    if (flags & FLAG_STANDARDIZED != 0) != meta.standardization.is_some() {
        return Err(FormatError::Metadata("standardized flag disagrees with metadata".into()));
    }
    Ok(Dataset::new(x, noise, dag, meta)?)
}

/// Convenience wrappers over a filesystem path.
pub fn save_dataset(ds: &Dataset, path: &std::path::Path) -> Result<(), FormatError> {
    let file = std::fs::File::create(path)?;
    write_dataset(ds, std::io::BufWriter::new(file))
}

pub fn load_dataset(path: &std::path::Path) -> Result<Dataset, FormatError> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file))
}

/// Metadata as an ordered map, for display.
pub fn meta_entries(meta: &DatasetMeta) -> BTreeMap<String, String> {
    encode_meta(meta)
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}
