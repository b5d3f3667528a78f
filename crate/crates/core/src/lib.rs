//! Certified single-photon fraction and key-rate bounds for 3-intensity
//! decoy-state QKD with imperfect sources and finite statistics.
//!
//! The crate is organised bottom-up:
//!
//! - [`source_model`]: photon-number coefficient bounds for the vacuum, decoy
//!   and signal sources, plus the admissibility conditions the bounds rely on.
//! - [`decoy_bounds`]: lower bounds on the single-photon count fraction, both
//!   asymptotic and with confidence intervals on the observed counts.
//! - [`key_rate`]: the key rate with a worst-case scan over the vacuum-count
//!   pivot `D0`, and the intensity-error sweep.
//! - [`adversary_sim`]: a pulse-level Monte Carlo with block-aware channels
//!   that serves as ground truth for the bounds.
//! - [`cli`]: configuration, tally files and subcommand dispatch.

pub mod adversary_sim;
pub mod cli;
pub mod decoy_bounds;
pub mod error;
pub mod interval;
pub mod key_rate;
pub mod source_model;

pub use error::{Error, Result};
pub use interval::Interval;
