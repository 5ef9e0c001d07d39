//! Certificate-guided diffusion planning for nonlinear control systems.
//!
//! A neural control Lyapunov barrier function guides a model-based diffusion
//! sampler over control trajectories, and the sampled trajectories in turn
//! train the certificate.

pub mod clbf;
pub mod cli;
pub mod config;
pub mod diffusion;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
