//! Checkpoint file: 8-byte magic, a length-prefixed textual config echo,
//! then named little-endian f32 arrays covering the normalization bounds
//! and every model parameter. Parameters are kept f32-representable in
//! memory, so save, load, save reproduces identical bytes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::diff::Tensor;
use crate::error::{AprError, Result};
use crate::geometry::NormalizationStats;
use crate::model::{AprConfig, AprModel};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"APRCKPT1";

const NORM_MIN: &str = "norm.min";
const NORM_MAX: &str = "norm.max";

fn push_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serialize the model and normalization bounds.
pub fn save_checkpoint(path: &Path, model: &AprModel, norm: &NormalizationStats) -> Result<()> {
    let config_text = toml::to_string(&model.config)
        .map_err(|e| AprError::Config(format!("config serialization failed: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    push_record(&mut out, NORM_MIN, &[3], &norm.min);
    push_record(&mut out, NORM_MAX, &[3], &norm.max);
    for id in 0..model.params.len() {
        let t = model.params.value(id);
        push_record(&mut out, model.params.name_of(id), &t.shape, &t.data);
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| AprError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AprError::io(
                self.path,
                format!("truncated checkpoint at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Load a checkpoint back into a model plus normalization stats. Every
/// parameter the configuration defines must be present with its exact
/// shape; unknown arrays are rejected.
pub fn load_checkpoint(path: &Path) -> Result<(AprModel, NormalizationStats)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AprError::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(AprError::io(path, "bad checkpoint magic"));
    }
    let config_len = r.u32()? as usize;
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|_| AprError::io(path, "config block is not utf-8"))?;
    let config: AprConfig = toml::from_str(config_text)
        .map_err(|e| AprError::Config(format!("checkpoint config: {e}")))?;

    let mut arrays: HashMap<String, Tensor> = HashMap::new();
    while !r.done() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| AprError::io(path, "array name is not utf-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 4)?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if arrays.insert(name.clone(), Tensor::new(shape, data)).is_some() {
            return Err(AprError::io(path, format!("duplicate array {name:?}")));
        }
    }

    let take_bounds = |arrays: &mut HashMap<String, Tensor>, name: &str| -> Result<[f64; 3]> {
        let t = arrays
            .remove(name)
            .ok_or_else(|| AprError::io(path, format!("missing array {name:?}")))?;
        if t.shape != [3] {
            return Err(AprError::io(path, format!("{name:?} must have shape [3]")));
        }
        Ok([t.data[0], t.data[1], t.data[2]])
    };
    let min = take_bounds(&mut arrays, NORM_MIN)?;
    let max = take_bounds(&mut arrays, NORM_MAX)?;

    let mut model = AprModel::new(config, 0)?;
    for id in 0..model.params.len() {
        let name = model.params.name_of(id).to_string();
        let t = arrays
            .remove(&name)
            .ok_or_else(|| AprError::io(path, format!("missing parameter {name:?}")))?;
        if t.shape != model.params.value(id).shape {
            return Err(AprError::io(
                path,
                format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    t.shape,
                    model.params.value(id).shape
                ),
            ));
        }
        *model.params.value_mut(id) = t;
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(AprError::io(path, format!("unknown array {extra:?}")));
    }
    Ok((model, NormalizationStats::from_bounds(min, max)))
}
