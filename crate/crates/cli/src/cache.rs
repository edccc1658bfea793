//! Preprocessed-payload cache files: one tensor per frame, written by
//! the `preprocess` subcommand. Layout is magic, u32 rank, u32 dims,
//! then f64 little-endian data, so a cache holds exactly the values the
//! model would see and round-trips bit-exactly.

use std::fs;
use std::path::Path;

use apr_core::{AprError, Result};

pub const BEV_CACHE_MAGIC: &[u8; 8] = b"APRBEVC1";
pub const POINTS_CACHE_MAGIC: &[u8; 8] = b"APRPTSC1";

pub fn write_cache(path: &Path, magic: &[u8; 8], dims: &[usize], data: &[f64]) -> Result<()> {
    let want: usize = dims.iter().product();
    assert_eq!(data.len(), want, "cache data does not fill its dims");
    let mut bytes = Vec::with_capacity(16 + 4 * dims.len() + 8 * data.len());
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| AprError::io(path, e))
}

pub fn read_cache(path: &Path, magic: &[u8; 8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| AprError::io(path, e))?;
    let bad = |msg: &str| AprError::Domain(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(bad("not a cache file of the expected kind"));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = 12 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated dim list"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let at = 12 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + 8 * count {
        return Err(bad("payload length does not match dims"));
    }
    let data: Vec<f64> = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}
