//! File formats, configuration and command implementations for the
//! `skmix` scoring engine. The numeric core lives in `skmix-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod manifest;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{ConfigError, RunConfig};
pub use container::{decode, encode, read_container, write_container, ContainerError, ContainerMeta};
pub use dataset::{load_dataset, write_synth, DataError, Dataset};
pub use error::CliError;
pub use manifest::{read_manifest, write_manifest, Manifest, ManifestRecord};
