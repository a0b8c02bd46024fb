//! Lattice-gas laboratory for equilibrium droplets in two dimensions.
//!
//! The model is the nearest-neighbor lattice gas on Z^2 with
//! `H = -sum n_x n_y - mu sum n_x`; gas and liquid coexist at
//! [`lattice::MU_COEXISTENCE`] for every `beta` above [`lattice::beta_critical`].

pub mod cluster;
pub mod contour;
pub mod experiments;
pub mod lattice;
pub mod mc;
pub mod oracle;
pub mod snapshot;
pub mod theory;
