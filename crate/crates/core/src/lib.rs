//! In-line hologram simulation, angular-spectrum refocusing, and 3-D
//! particle recovery from per-plane segmentation masks.
//!
//! The usual flow is [`simulate`] or real holograms, then
//! [`pipeline::process_hologram`] with a [`segment::Segmenter`], then
//! [`evaluate`] against truth.
//!
//! Conventions: lengths are micrometers; images are `(rows, cols)` arrays
//! with pixel `(col, row)` centered at `(col dx, row dy)`; the camera sits
//! at `z = 0` and particle depths are positive.

pub mod config;
pub mod detect3d;
pub mod error;
pub mod evaluate;
pub mod fft;
pub mod io;
pub mod optics;
pub mod pipeline;
pub mod segment;
pub mod simulate;
pub mod tiling;
pub mod transforms;

pub use error::{Error, Result};
