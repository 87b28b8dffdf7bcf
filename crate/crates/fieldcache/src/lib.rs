//! Front end for `fieldcache-core`: configuration and scene files, binary
//! checkpoint and cache formats, image output, metrics, redundancy and cost
//! analysis, experiment drivers and the command-line interface.

pub mod cli;
pub mod config;
pub mod cost;
pub mod experiment;
pub mod formats;
pub mod image_io;
pub mod metrics;
pub mod redundancy;
pub mod scene_file;
