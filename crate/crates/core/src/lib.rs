//! Numerical engine for the multi-factor quadratic Hobson–Rogers model.
//!
//! The offsets `y` follow `dy = −Λy dt + bσ dW` with instantaneous variance
//! `σ² = α + 2βᵀy + yᵀΓy`, and the detrended log-price follows
//! `dx = −½σ² dt + σ dW` on the same Brownian motion.

pub mod error;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod moments;
pub mod pricing;
pub mod quad;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, Vector};
pub use model::{Diagnostics, JordanSpec, ModelParams};
pub use moments::{EtaState, MomentSystem, StationarySummary};
