//! Numerical kernels for dual-domain low-light enhancement and priority-guided
//! state-space fusion of RGB and infrared features.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: feature maps, depthwise convolution, pooling, the binary tensor format
//! - [`wavelet`] and [`spectral`]: the two exact transforms the enhancement stage wraps
//! - [`ssm`]: discretization, scans, the convolution-kernel form and the decay analysis
//! - [`dde`]: wavelet-domain brightness enhancement plus Fourier detail recovery
//! - [`pgmf`]: priority scoring, priority-ordered serialization and SSM fusion
//! - [`verify`]: losses, hand-derived gradients with finite-difference checks, report suites
//! - [`config`] and [`bundle`]: run settings and on-disk parameter sets

pub mod bundle;
pub mod config;
pub mod dde;
pub mod error;
pub mod nn;
pub mod params;
pub mod pgmf;
pub mod tensor;
pub mod verify;
pub mod spectral;
pub mod ssm;
pub mod wavelet;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use tensor::{DType, FeatureMap, Prng, Real, Shape, TokenSeq};
