//! Numerical neck analysis for bubbling sequences of harmonic maps from surfaces.

pub mod error;
pub mod exec;
pub mod experiments;
pub mod grid;
pub mod harmap;
pub mod harmonic;
pub mod jacobi;
pub mod linalg;
pub mod neck;
pub mod poisson;
pub mod stencil;
pub mod target;

pub use error::{NeckError, Result};
pub use exec::Execution;
pub use grid::{eta_weight, fourier_modes, synthesize, weighted_sup_norm, CylinderGrid, Field, ModeProfile};
