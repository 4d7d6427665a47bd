//! Checkpoint format: one newline-terminated JSON header (configs plus
//! parameter names and shapes, in file order) followed by the raw
//! little-endian f64 parameter values.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dformer::DformerConfig;
use crate::error::{Error, Result};
use crate::rformer::RformerConfig;
use crate::tensor::Tensor;

pub const FORMAT_TAG: &str = "freqrestore-ckpt-v1";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub dformer: Option<DformerConfig>,
    pub rformer: Option<RformerConfig>,
    /// True when modulation ratios are free parameters instead of being
    /// embedded from a degradation representation.
    #[serde(default)]
    pub learnable_ratios: bool,
    #[serde(default)]
    pub seed: u64,
    /// Training stage that produced this checkpoint (1 or 2).
    #[serde(default)]
    pub stage: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: CheckpointConfig,
    params: Vec<ParamMeta>,
}

/// A loaded checkpoint: config plus named raw buffers.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn save(path: &Path, config: &CheckpointConfig, params: &[(String, Tensor)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let header = Header {
        format: FORMAT_TAG.into(),
        config: config.clone(),
        params: params
            .iter()
            .map(|(name, t)| ParamMeta { name: name.clone(), shape: t.shape() })
            .collect(),
    };
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (_, t) in params {
        for v in t.data().iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte)?;
        if n == 0 {
            return Err(Error::Checkpoint("missing header terminator".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format != FORMAT_TAG {
        return Err(Error::Checkpoint(format!("unknown format '{}'", header.format)));
    }
    let mut params = Vec::with_capacity(header.params.len());
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    let mut offset = 0usize;
    for meta in header.params {
        let numel: usize = meta.shape.iter().product();
        let bytes = numel * 8;
        if offset + bytes > buf.len() {
            return Err(Error::Checkpoint(format!("truncated data for '{}'", meta.name)));
        }
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let start = offset + i * 8;
            let mut le = [0u8; 8];
            le.copy_from_slice(&buf[start..start + 8]);
            data.push(f64::from_le_bytes(le));
        }
        offset += bytes;
        params.push((meta.name, meta.shape, data));
    }
    if offset != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint { config: header.config, params })
}

impl Checkpoint {
    /// Copy stored values into a live parameter tree, matching by name.
    /// Every target parameter must be present with the right shape.
    pub fn load_into(&self, targets: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in targets {
            let found = self
                .params
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            if found.1 != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for '{name}': stored {:?}, model {:?}",
                    found.1,
                    tensor.shape()
                )));
            }
            tensor.update_data(|data| data.copy_from_slice(&found.2));
        }
        Ok(())
    }

    pub fn has_section(&self, prefix: &str) -> bool {
        self.params.iter().any(|(n, _, _)| n.starts_with(prefix))
    }
}
