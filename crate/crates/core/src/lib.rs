//! Simulation and benchmarking toolkit for compressed sensing in scanning
//! transmission electron microscopy.
//!
//! The pipeline is: generate a sparse scan path ([`scan_path`]), simulate a
//! noisy partial acquisition ([`acquisition`]), complete the unscanned pixels
//! ([`completion`]) or denoise full scans ([`denoise`]), then score the result
//! ([`metrics`]). [`alrc`] holds the adaptive loss-clipping transform and a
//! small optimizer harness for studying it.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`).

pub mod acquisition;
pub mod alrc;
pub mod completion;
pub mod denoise;
pub mod error;
pub mod image;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod scan_path;
pub mod serde_ext;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ImageF32 = image::Image<f32>;
pub type ImageF64 = image::Image<f64>;
pub type AlrcStateF32 = alrc::AlrcState<f32>;
pub type AlrcStateF64 = alrc::AlrcState<f64>;
pub type ErrorMapF32 = metrics::ErrorMap<f32>;
pub type ErrorMapF64 = metrics::ErrorMap<f64>;
