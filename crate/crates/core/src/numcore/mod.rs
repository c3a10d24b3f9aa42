//! Dense tensor arithmetic, reverse-mode autodiff, the AdamW optimizer, and
//! learning-rate schedules. Everything else in the crate builds on this.

pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tape;
pub mod tensor;

pub use optim::{AdamW, AdamWConfig};
pub use params::{init_ones, init_weight, init_zeros, ParamStore, Parameter};
pub use scalar::Scalar;
pub use schedule::{LrSchedule, ScheduleKind};
pub use tape::{gelu_scalar, matmul_raw, NodeId, Tape};
pub use tensor::{Tensor, Tensor64};
