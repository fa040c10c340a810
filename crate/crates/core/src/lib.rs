//! Simulator and diagnostics for a bright soliton oscillating in a truncated
//! harmonic well, governed by the 1D Gross-Pitaevskii equation
//!
//! ```text
//! i ∂t ψ = -∂x² ψ + λ|ψ|²ψ + V ψ
//! ```
//!
//! in units with `m = 1/2`, `ħ = 1`: the kinetic term is `-∂x²` and the fluid
//! velocity is `v = 2 ∂x arg ψ`.

pub mod error;
pub mod dynamics;
pub mod grid;
pub mod hydro;
mod linalg;
pub mod modulation;
pub mod potentials;
pub mod scenario;
pub mod soliton;
pub mod tunneling;

pub use error::{Error, Result};
pub use grid::{ComplexField, Grid1D, Method, RealField};
pub use num_complex::Complex64;
pub use potentials::{PotentialShape, PotentialSpec, TransitionForce};
