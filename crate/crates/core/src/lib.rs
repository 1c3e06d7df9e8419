//! Poisson-driven collapse dynamics of unstable quantum systems.
//!
//! A pure state evolves under a Hamiltonian H and, at the event times of a
//! Poisson process of intensity λ, is mapped η ↦ Cη by a contraction C. The
//! crate simulates those trajectories and cross-checks them against the
//! averaged master equation, the generating-functional ODE, explicit unitary
//! dilations of C and the large-intensity diffusion limit.

pub mod cli;
pub mod diffusion;
pub mod dilation;
pub mod error;
pub mod genfun;
pub mod io;
pub mod linalg;
pub mod master;
pub mod model;
pub mod ode;
pub mod parallel;
pub mod quadrature;
pub mod rng;
pub mod trajectory;
pub mod verify;
pub mod zeno;

pub use error::{Error, Result};
pub use linalg::{Operator, StateVector};
pub use model::{ModelSpec, ValidatedModel};
