//! Weak-measurement noise correlators under general operator orderings.
//!
//! Natural units throughout: ħ = k_B = e = 1, angular frequencies,
//! temperatures as energies.

pub mod correlator;
pub mod error;
pub mod hilbert;
pub mod junction;
pub mod kernel;
pub mod oscillator;
pub mod povm;
pub mod quad;

pub use error::{Error, Result};
