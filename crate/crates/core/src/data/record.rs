//! On-disk dataset format: one raw little-endian f32 signal file per record
//! (`<id>.ecg`, lead-major), plus a `manifest.json` index.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEADS: usize = 12;
pub const SIGNAL_LEN: usize = 1000;
pub const SAMPLE_RATE: f64 = 100.0;
pub const DATA_FORMAT_VERSION: &str = "ecgsoup-data-v1";

/// Lead order fixed across every artifact in the project.
pub const LEAD_NAMES: [&str; LEADS] = [
    "I", "II", "III", "AVR", "AVL", "AVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

pub fn lead_index(name: &str) -> Option<usize> {
    LEAD_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(name))
}

/// One 12-lead fixed-length record with multi-hot labels.
#[derive(Debug, Clone)]
pub struct EcgRecord {
    pub id: String,
    /// leads x samples, row-major, already resampled/padded to C x L.
    pub signal: Vec<f32>,
    pub labels: Vec<u8>,
    pub source_rate: f64,
    pub source_len: usize,
}

impl EcgRecord {
    pub fn lead(&self, c: usize) -> &[f32] {
        &self.signal[c * SIGNAL_LEN..(c + 1) * SIGNAL_LEN]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub file: String,
    pub offset: u64,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: String,
    pub task: String,
    pub label_names: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(task: impl Into<String>, label_names: Vec<String>) -> Self {
        DatasetManifest {
            version: DATA_FORMAT_VERSION.to_string(),
            task: task.into(),
            label_names,
            records: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != DATA_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported dataset version {:?}, expected {:?}",
                self.version, DATA_FORMAT_VERSION
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DataIntegrity(format!(
                    "duplicate record id {:?} in manifest",
                    r.id
                )));
            }
            if r.labels.len() != self.label_names.len() {
                return Err(Error::DataIntegrity(format!(
                    "record {:?} has {} labels, manifest declares {}",
                    r.id,
                    r.labels.len(),
                    self.label_names.len()
                )));
            }
            if r.labels.iter().any(|&l| l > 1) {
                return Err(Error::Input(format!(
                    "record {:?} labels must be multi-hot 0/1",
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&body).map_err(|e| Error::format(&path, e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Write one signal file: raw little-endian f32, lead-major.
pub fn write_signal(path: &Path, signal: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(signal.len() * 4);
    for &v in signal {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_signal(path: &Path, offset: u64, samples: usize) -> Result<Vec<f32>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let start = offset as usize;
    let need = samples * 4;
    if bytes.len() < start + need {
        return Err(Error::format(
            path,
            format!(
                "signal file too short: need {} bytes at offset {}, have {}",
                need,
                start,
                bytes.len()
            ),
        ));
    }
    Ok(bytes[start..start + need]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

/// Load every record in a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<EcgRecord>)> {
    let manifest = DatasetManifest::load(dir)?;
    let mut records = Vec::with_capacity(manifest.records.len());
    for mr in &manifest.records {
        let path = dir.join(&mr.file);
        let signal = read_signal(&path, mr.offset, LEADS * SIGNAL_LEN)?;
        records.push(EcgRecord {
            id: mr.id.clone(),
            signal,
            labels: mr.labels.clone(),
            source_rate: SAMPLE_RATE,
            source_len: SIGNAL_LEN,
        });
    }
    Ok((manifest, records))
}

/// CSV ingestion: one file per record, header row with the fixed lead names,
/// 12 columns of samples at `src_rate`.
pub fn read_csv_record(path: &Path, src_rate: f64) -> Result<Vec<Vec<f64>>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty CSV"))?;
    let cols: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    if cols.len() != LEADS {
        return Err(Error::format(
            path,
            format!("expected {} lead columns, got {}", LEADS, cols.len()),
        ));
    }
    let mut order = [0usize; LEADS];
    for (i, c) in cols.iter().enumerate() {
        order[i] = lead_index(c)
            .ok_or_else(|| Error::format(path, format!("unknown lead name {:?}", c)))?;
    }
    if src_rate <= 0.0 {
        return Err(Error::Input(format!("source rate must be > 0, got {src_rate}")));
    }
    let mut leads: Vec<Vec<f64>> = vec![Vec::new(); LEADS];
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != LEADS {
            return Err(Error::format(
                path,
                format!("row {} has {} columns, expected {}", ln + 2, vals.len(), LEADS),
            ));
        }
        for (i, v) in vals.iter().enumerate() {
            let x: f64 = v.trim().parse().map_err(|_| {
                Error::format(path, format!("row {} column {}: bad number {:?}", ln + 2, i, v))
            })?;
            leads[order[i]].push(x);
        }
    }
    Ok(leads)
}

pub fn signal_file_name(id: &str) -> PathBuf {
    PathBuf::from(format!("{id}.ecg"))
}
