//! Prior-fitted transformer surrogates for Bayesian optimisation, with an
//! exact-GP baseline, synthetic benchmark objectives, and the posterior
//! proximity experiments — all on a shared minimal tensor substrate.

pub mod acquisition;
pub mod bo;
pub mod error;
pub mod gp;
pub mod gp_surrogate;
pub mod lemma;
pub mod objectives;
pub mod prior;
pub mod pt;
pub mod riemann;
pub mod rng;
pub mod stats;

pub use error::{CoreError, Result};
