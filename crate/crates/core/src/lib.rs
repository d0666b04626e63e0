//! Particle laboratory for consensus-based optimization (CBO).

pub mod analysis;
pub mod constants;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod laws;
pub mod matrix;
pub mod objectives;
pub mod rng;

pub use dynamics::{
    consensus_point, em_step, mean_point, noise_factor, simulate, CboParams, Ensemble, NoiseKind,
    Observer,
};
pub use error::{CboError, Result};
pub use laws::{InitialLaw, LawKind};
pub use matrix::Matrix;
pub use objectives::{make_builtin, Objective};
pub use rng::{brownian_increments, RngStream, StreamDomain};
