//! KAM reduction of quasiperiodically forced quadratic Hamiltonians and
//! Hermite-basis simulation of the corresponding quantum oscillators.

pub mod error;
pub mod homological;
pub mod kam;
pub mod linalg;
pub mod quad_ham;
pub mod sim_classical;
pub mod sim_quantum;
pub mod symplectic;
pub mod torus_fourier;

pub use error::{KamError, Result};
