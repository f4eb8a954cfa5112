//! Numerical experiments for the damped biharmonic wave equation
//! `ρ ∂t²u + Δ²u + γ ∂tu = 0` on a clamped interval or rectangle:
//! discretization, resolvent and time integration, boundary observability,
//! multiplier identities, Lipschitz stability in the density, and
//! reconstruction from boundary traces.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod biharmonic;
pub mod elliptic;
pub mod error;
pub mod evolution;
pub mod fields;
pub mod grid;
pub mod inversion;
pub mod linalg;
pub mod observability;
pub mod snapshot;

pub use biharmonic::{energy, norm_equivalence_bounds, spectrum, ClampedOperator, EigenPair, EnergyValue, Traces};
pub use error::{Error, Result};
pub use fields::{check_admissible, make_density, make_initial_data, DensityField, Family, Inclusion, InitialData};
pub use grid::{build_grid, min_observation_time, star_shape_margin, Grid};
