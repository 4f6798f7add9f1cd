//! Densely connected convolutional networks for frame-level acoustic
//! classification.
//!
//! This crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation:
//!
//! - [`tensor`] and [`layers`]: the NCHW tensor type and the forward/backward
//!   kernels for every layer the network uses.
//! - [`arch`]: configuration, layer-count arithmetic and the planned
//!   architecture table.
//! - [`model`]: the executable network with dense-block wiring, parameter store
//!   and parameter counting.
//! - [`features`]: deltas, corpus mean/variance normalization and context
//!   splicing.
//! - [`train`] and [`synth`]: SGD, the learning-rate schedule, evaluation and a
//!   synthetic frame generator.
//! - [`gradcheck`]: central finite-difference verification of every layer.
//!
//! File formats, audio front-end and the command-line tool live in the
//! companion `densenet` crate.

#![no_std]

extern crate alloc;

pub mod arch;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use arch::{ArchitectureTable, DenseNetConfig, StageKind, StageRecord, Variant};
pub use error::{Error, Result};
pub use features::{CmvnStats, FrameSet, UtteranceFeatures};
pub use model::{Gradients, Model, ParamCount, ParamStore, Tape};
pub use synth::{make_synthetic_dataset, SynthConfig};
pub use tensor::{Real, Tensor};
pub use train::{Evaluation, Metrics, ScheduleConfig, ScheduleState, Sgd, StopReason, TrainConfig};
