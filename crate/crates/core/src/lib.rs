//! Simulation of random dynamical systems driven by a frozen two-sided
//! Brownian realization, with empirical certification of pullback
//! convergence to a unique random equilibrium.
//!
//! The crate is organized around one workflow: sample a two-sided Wiener
//! path once ([`noise`]), pick one of four SDE system classes with declared
//! stability constants ([`systems`]), integrate along the frozen path
//! ([`integrators`], [`stationary`]), and run pullback diagnostics that
//! measure contraction rates, temperedness, invariance and uniqueness of
//! the limiting random equilibrium ([`pullback`]).

pub mod error;
pub mod fit;
pub mod integrators;
pub mod linalg;
pub mod noise;
pub mod pullback;
pub mod rng;
pub mod stationary;
pub mod systems;

pub use error::{Error, Result};
