//! The 1D vision transformer backbone for fixed-length 12-lead ECG:
//! patch/SEP/positional/lead embeddings and the stacked encoder with
//! per-layer activation and attention capture.

pub mod checkpoint;
pub mod config;
pub mod layout;
pub mod model;

pub use checkpoint::{
    load_checkpoint, read_header, save_checkpoint, CkptHeader, LoadedCheckpoint, CKPT_VERSION,
};
pub use config::{DecoderConfig, VitConfig};
pub use layout::{strip_sep, TokenLayout};
pub use model::{
    cast_tensor, patchify, CaptureIds, CaptureOpts, LayerActivations, Mode, ParamCache, VitModel,
    LN_EPS,
};
