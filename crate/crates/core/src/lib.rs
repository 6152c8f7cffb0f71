//! Spectral solver and linear-analysis toolkit for coupled chemotaxis–fluid
//! dynamics in the periodic channel `T x [-1, 1]` near Poiseuille flow.
//!
//! The crate is organized around a Fourier–Chebyshev discretization
//! ([`grid`]), per-wavenumber elliptic solves ([`elliptic`]), a split-step
//! time integrator for the advection–diffusion–chemotaxis–vorticity system
//! ([`dynamics`]), spectral analysis of the advection–diffusion operator
//! ([`linanalysis`]) and the norms, inequalities and run classification used
//! to interpret trajectories ([`diagnostics`]).
//!
//! Everything is generic over the floating-point scalar through
//! [`scalar::Real`]; the aliases below fix `f64` for ordinary use.

pub mod diagnostics;
pub mod dynamics;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod linanalysis;
pub mod scalar;

pub use error::{Error, Result};

/// Default scalar for production runs.
pub type Scalar = f64;

pub type Grid = grid::ChannelGrid<Scalar>;
pub type Field = grid::PhysField<Scalar>;
pub type Modes = grid::ModeStack<Scalar>;
pub type Params = dynamics::SimParams<Scalar>;
pub type State = dynamics::SimState<Scalar>;
