//! Simulation and verification library for interacting particle systems whose
//! network weights co-evolve with the particle states.
//!
//! The library covers three equivalent formulations of the same dynamics and
//! the machinery needed to check, quantitatively, that they agree:
//!
//! * the coupled formulation — particles `phi^k` and weights `w_kl` integrated
//!   jointly ([`dynamics::simulate_coupled`]),
//! * the memory formulation — weights eliminated in favour of a non-local-in-time
//!   kernel acting on state histories ([`dynamics::simulate_memory`]),
//! * the mean-field/continuum formulation — characteristics of a labeled
//!   measure-valued equation driven by a graphon ([`meanfield`]).
//!
//! [`transport`] provides exact Wasserstein-1 distances (assignment and network
//! simplex) together with the stability-bound evaluators used to verify the
//! contraction estimates, and [`graphon`] provides the weight-limit objects the
//! continuum formulation is built from.
//!
//! Everything is deterministic: fixed-order accumulation makes results
//! independent of thread count, and all sampling is driven by seeded ChaCha8
//! streams.

pub mod catalog;
pub mod dynamics;
pub mod error;
pub mod graphon;
pub mod meanfield;
mod quad;
pub mod transport;
pub mod trajectory;

pub use error::{CoreError, CoreResult};
