//! File formats, audio front end and command-line tool built on
//! [`densenet_core`].
//!
//! - [`fbank`] and [`wav`]: log-Mel filterbank features from 16-bit PCM audio.
//! - [`archive`]: the feature archive and normalization statistics files.
//! - [`checkpoint`] and [`metrics`]: training outputs.
//! - [`config`] and [`manifest`]: run configuration and utterance lists.
//! - [`commands`] and [`cli`]: the subcommands behind the `densenet` binary.

mod codec;

pub mod archive;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod fbank;
pub mod manifest;
pub mod metrics;
pub mod wav;

pub use config::RunConfig;
pub use error::{exit, Error, FormatError, Result};
