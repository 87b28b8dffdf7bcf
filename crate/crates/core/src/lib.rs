//! Radiance fields over a dynamic scene graph with a per-bin feature cache:
//! a learned consistency score decides per query whether to run the full
//! network, reuse a cached canonical feature, or skip empty space.
//!
//! The crate is `no_std` + `alloc`; file formats, the CLI and experiment
//! drivers live in the companion `fieldcache` crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod autodiff;
pub mod cache;
pub mod fields;
pub mod math;
pub mod presets;
pub mod render;
pub mod reuse;
pub mod scene;
pub mod train;
