//! Certification of uncharacterized projective measurements against
//! state-independent contextuality sets, using only statistics collected on
//! the maximally mixed state.
//!
//! The pipeline runs in four stages:
//!
//! - [`opticsim`] forward-models the sequential photonic measurement and
//!   produces an [`opticsim::ExperimentRecord`];
//! - [`noisefit`] optionally removes channel noise from the measured
//!   orthogonality errors;
//! - [`witness`] evaluates the witness on the maximally mixed state and
//!   turns it into a worst-case bound over all states;
//! - [`certsdp`] searches for the Gram-matrix threshold `W_SDP`.
//!
//! Certification succeeds when `W_worst > W_SDP`. [`pipeline`] glues the
//! stages together and adds bootstrap error bars and parameter sweeps.

extern crate openblas_src;

pub mod certsdp;
pub mod error;
pub mod geometry;
pub mod noisefit;
pub mod opticsim;
pub mod pipeline;
pub mod witness;

pub use error::{Error, Result};
