//! Simulation of NV-center based two-dimensional NMR on small molecular
//! spin clusters, with reconstruction of sub-sampled time-domain data by
//! singular-value-thresholding matrix completion.
//!
//! The crate is organized along the processing pipeline:
//!
//! * [`spin_model`] — nuclei, NV sensor, field, coupling constants
//! * [`operators`] — dense Hermitian operators over the joint Hilbert space
//! * [`dynamics`] — propagation, pulses, polarization transfer, NV readout
//! * [`protocols`] — COSY / strong-coupling / angle-sweep experiment runners
//! * [`completion`] — SVT matrix completion and reconstruction scoring
//! * [`spectra`] — 2D DFT, peak detection, aliasing, geometry inversion
//! * [`config`] / [`pipeline`] — reproducible experiment runs

pub mod completion;
pub mod config;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod geometry_fit;
pub mod operators;
pub mod pipeline;
pub mod protocols;
pub mod render;
pub mod signal_io;
pub mod spectra;
pub mod spin_model;
pub mod state;
pub mod svd;

pub use error::NvmrError;
pub type Result<T> = std::result::Result<T, NvmrError>;
