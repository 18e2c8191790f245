//! IO companion to `rearrange-core`: file formats (scenarios, checkpoints,
//! traces, datasets, curves), run configuration, and rayon-parallel suite
//! drivers whose outputs are bit-identical to the sequential core harness.

pub mod config;
pub mod drive;
pub mod formats;
