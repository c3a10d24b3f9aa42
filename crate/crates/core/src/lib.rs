//! ecg-soup core library: a 1D masked vision transformer for fixed-length
//! 12-lead ECG, cross-layer representation aggregation (last-layer / pooled /
//! gated mixture, plus the in-pretraining pooled variant), and a layer-wise
//! diagnostics suite (attention-matrix contraction, cosine similarity,
//! attention entropy). Self-contained: the numeric stack, the data formats,
//! and a synthetic ECG generator all live here.

pub mod backbone;
pub mod data;
pub mod error;
pub mod numcore;
pub mod pretrain;

pub use error::{Error, Result};
