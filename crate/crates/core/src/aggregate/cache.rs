//! Activation cache: per-record layer summaries persisted as a binary
//! container keyed by (record id, layer), with a JSON index up front.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::tensor::{Tensor, Tensor64};

pub const ACT_FORMAT_VERSION: &str = "ecgsoup-act-v1";

/// Per-record layer summaries (depth x D each) plus labels, the working set
/// of every probing run.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub depth: usize,
    pub dim: usize,
    pub ids: Vec<String>,
    pub labels: Vec<Vec<u8>>,
    pub summaries: Vec<Tensor64>,
}

impl FeatureSet {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    pub fn label_count(&self) -> usize {
        self.labels.first().map(|l| l.len()).unwrap_or(0)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    id: String,
    labels: Vec<u8>,
    /// Byte offset of this record's depth x dim block; layer l starts at
    /// offset + l * dim * 8.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct CacheIndex {
    version: String,
    depth: usize,
    dim: usize,
    entries: Vec<CacheEntry>,
}

pub fn save_feature_cache(path: &Path, set: &FeatureSet) -> Result<()> {
    let mut data: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(set.ids.len());
    for (i, id) in set.ids.iter().enumerate() {
        let offset = data.len() as u64;
        for &v in set.summaries[i].data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(CacheEntry {
            id: id.clone(),
            labels: set.labels[i].clone(),
            offset,
        });
    }
    let index = CacheIndex {
        version: ACT_FORMAT_VERSION.to_string(),
        depth: set.depth,
        dim: set.dim,
        entries,
    };
    let index_bytes =
        serde_json::to_vec(&index).map_err(|e| Error::format(path, e.to_string()))?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&(index_bytes.len() as u64).to_le_bytes())
        .and_then(|_| file.write_all(&index_bytes))
        .and_then(|_| file.write_all(&data))
        .map_err(|e| Error::io(path, e))
}

pub fn load_feature_cache(path: &Path) -> Result<FeatureSet> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::format(path, "file too short for an index header"));
    }
    let index_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let index: CacheIndex = serde_json::from_slice(&bytes[8..8 + index_len])
        .map_err(|e| Error::format(path, e.to_string()))?;
    if index.version != ACT_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "unsupported cache version {:?}, expected {:?}",
                index.version, ACT_FORMAT_VERSION
            ),
        ));
    }
    let data = &bytes[8 + index_len..];
    let block = index.depth * index.dim * 8;
    let mut ids = Vec::with_capacity(index.entries.len());
    let mut labels = Vec::with_capacity(index.entries.len());
    let mut summaries = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let start = e.offset as usize;
        if start + block > data.len() {
            return Err(Error::format(
                path,
                format!("entry {:?} overruns the data section", e.id),
            ));
        }
        let values: Vec<f64> = data[start..start + block]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        ids.push(e.id.clone());
        labels.push(e.labels.clone());
        summaries.push(Tensor::matrix(index.depth, index.dim, values)?);
    }
    Ok(FeatureSet {
        depth: index.depth,
        dim: index.dim,
        ids,
        labels,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.act");
        let set = FeatureSet {
            depth: 3,
            dim: 4,
            ids: vec!["a".into(), "b".into()],
            labels: vec![vec![1, 0], vec![0, 1]],
            summaries: vec![
                Tensor::matrix(3, 4, (0..12).map(|x| x as f64 * 0.31).collect()).unwrap(),
                Tensor::matrix(3, 4, (0..12).map(|x| -(x as f64) * 0.17).collect()).unwrap(),
            ],
        };
        save_feature_cache(&path, &set).unwrap();
        let back = load_feature_cache(&path).unwrap();
        assert_eq!(back.ids, set.ids);
        assert_eq!(back.labels, set.labels);
        for (a, b) in back.summaries.iter().zip(&set.summaries) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
