//! Layered-video editing engine.
//!
//! A video is decomposed into a background layer and foreground layers, each
//! an atlas plus per-frame UV (and opacity) maps. Edits are made on sparse key
//! frames, propagated from one key frame to the next through atlas space,
//! fused into a single edited atlas by a small convolutional network, and
//! composited back into every frame.

pub mod aggregation;
pub mod compositor;
pub mod error;
pub mod generators;
pub mod guidance;
pub mod mapping;
pub mod metrics;
pub mod propagation;
pub mod scene;
pub mod schedule;
pub mod synth;

pub use error::{Error, Result};
