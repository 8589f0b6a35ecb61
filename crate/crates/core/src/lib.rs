//! Decoupled latent-signal / aleatoric binned surrogates for sequential
//! decision-making.

pub mod acq;
pub mod bench;
pub mod bins;
pub mod error;
pub mod gp;
pub mod harness;
pub mod model;
pub mod par;
pub mod predict;
pub mod prior;
pub mod rng;
pub mod sobol;
pub mod special;

pub use error::{Error, Result};
