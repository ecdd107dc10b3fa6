//! A passthrough filesystem that finds sensitive byte patterns in data crossing
//! the read and write paths and rewrites them according to a JSON policy.

#[cfg(feature = "fuse")]
pub mod adapter;
pub mod bench;
pub mod cli;
pub mod datagen;
pub mod domains;
pub mod engine;
pub mod matcher;
pub mod policy;
pub mod transform;
pub mod vfs;

pub use matcher::{scan, scan_truncated, MatchSpan};
pub use policy::{parse_policy, PolicyError, PolicyOptions, PolicySpec};
