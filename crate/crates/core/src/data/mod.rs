//! Dataset format, ingestion/preprocessing, the synthetic 12-lead generator,
//! fold splitting, and multi-label evaluation.

pub mod metrics;
pub mod preprocess;
pub mod record;
pub mod split;
pub mod synth;

pub use metrics::{evaluate, roc_auc, Metrics, DEFAULT_THRESHOLD};
pub use preprocess::{preprocess, to_storage};
pub use record::{
    lead_index, load_dataset, read_csv_record, read_signal, signal_file_name, write_signal,
    DatasetManifest, EcgRecord, ManifestRecord, DATA_FORMAT_VERSION, LEADS, LEAD_NAMES,
    SAMPLE_RATE, SIGNAL_LEN,
};
pub use split::{assert_no_leakage, kfold_split, FoldDesignation, FoldSplit};
pub use synth::{synth_generate, synth_to_dir, ClassSpec, SyntheticSpec, WaveComponent};
