//! Model checkpoint container: a u64-LE header length, a JSON header
//! (version, config, dtype, parameter names/shapes/offsets), then raw
//! little-endian parameter data. Round-trips are bitwise.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::config::{DecoderConfig, VitConfig};
use crate::backbone::model::VitModel;
use crate::error::{Error, Result};
use crate::numcore::scalar::Scalar;
use crate::numcore::tensor::Tensor;

pub const CKPT_VERSION: &str = "ecgsoup-ckpt-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkptEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkptHeader {
    pub version: String,
    pub dtype: String,
    pub config: VitConfig,
    pub decoder: Option<DecoderConfig>,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<CkptEntry>,
}

/// Write the full parameter store plus any extra named tensors (optimizer
/// moments, head parameters) into one container file.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &VitModel<S>,
    meta: serde_json::Value,
    extra: &[(String, Tensor<S>)],
) -> Result<()> {
    let mut entries = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    {
        let mut push = |name: &str, t: &Tensor<S>| {
            let offset = data.len() as u64;
            for &v in t.data() {
                v.write_le(&mut data);
            }
            entries.push(CkptEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                nbytes: (t.len() * S::BYTES) as u64,
            });
        };
        for p in model.store.iter() {
            push(&p.name, &p.value);
        }
        for (name, t) in extra {
            push(name, t);
        }
    }
    let header = CkptHeader {
        version: CKPT_VERSION.to_string(),
        dtype: S::DTYPE.to_string(),
        config: model.config,
        decoder: model.decoder_config,
        meta,
        params: entries,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .and_then(|_| file.write_all(&header_bytes))
        .and_then(|_| file.write_all(&data))
        .map_err(|e| Error::io(path, e))
}

pub struct LoadedCheckpoint<S: Scalar> {
    pub model: VitModel<S>,
    pub meta: serde_json::Value,
    /// Entries that are not encoder/decoder parameters (optimizer moments,
    /// head and gate parameters), keyed by name.
    pub extra: BTreeMap<String, Tensor<S>>,
}

pub fn read_header(path: &Path) -> Result<CkptHeader> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header: CkptHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if header.version != CKPT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "unsupported checkpoint version {:?}, expected {:?}",
                header.version, CKPT_VERSION
            ),
        ));
    }
    Ok(header)
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<LoadedCheckpoint<S>> {
    let header = read_header(path)?;
    if header.dtype != S::DTYPE {
        return Err(Error::format(
            path,
            format!(
                "checkpoint dtype {} does not match the requested precision {}",
                header.dtype,
                S::DTYPE
            ),
        ));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let data_start = 8 + {
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&bytes[..8]);
        u64::from_le_bytes(len_bytes) as usize
    };
    let data = &bytes[data_start..];

    // seed is irrelevant: every parameter is overwritten below
    let mut model: VitModel<S> = VitModel::new(header.config, header.decoder, 0)?;
    let mut extra = BTreeMap::new();
    for entry in &header.params {
        let start = entry.offset as usize;
        let end = start + entry.nbytes as usize;
        if end > data.len() {
            return Err(Error::format(
                path,
                format!("entry {:?} overruns the data section", entry.name),
            ));
        }
        let values: Vec<S> = data[start..end]
            .chunks_exact(S::BYTES)
            .map(S::read_le)
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), values)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if model.store.index_of(&entry.name).is_some() {
            model.store.load_value(&entry.name, tensor)?;
        } else {
            extra.insert(entry.name.clone(), tensor);
        }
    }
    Ok(LoadedCheckpoint {
        model,
        meta: header.meta,
        extra,
    })
}
