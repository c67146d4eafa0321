//! Tracking of near-field, spatially non-stationary XL-MIMO channels.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: array geometry, steering vectors, delay responses, channel synthesis.
//! * [`hbf`]: sub-array hybrid beamforming pilot coding and per-antenna decoding.
//! * [`grid`]: the polar-delay grid, its basis and the VR-masked transform.
//! * [`priors`]: Markov support priors, the 2D visibility model and Gauss-Markov power values.
//! * [`scenario`]: a dynamic ground-truth scene generator.
//! * [`linear`]: sufficient statistics of the Gaussian linear model used by the estimators.
//! * [`vbi`]: variational inference for the sparse gains.
//! * [`turbo`]: visibility-region detection by turbo message passing.
//! * [`refine`]: off-grid refinement of grid points.
//! * [`tracker`]: the per-frame alternating loop and the temporal prior hand-off.
//! * [`metrics`]: NMSE measures.

pub mod error;
pub mod grid;
pub mod hbf;
pub mod linear;
pub mod metrics;
pub mod model;
pub mod priors;
pub mod refine;
pub mod scenario;
pub mod tracker;
pub mod turbo;
pub mod vbi;

pub use error::{Error, Result};
pub use num_complex::Complex64;
