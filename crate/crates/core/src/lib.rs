//! Finite-volume simulation of nonlinear Fokker–Planck equations with
//! superlinear drift, `∂t u − div(M∇u + E g(u)) = f` on boxes with zero
//! Dirichlet data, together with the closed-form estimates (exponents,
//! regime thresholds, ODE comparison bounds, blow-up times) used to check
//! simulated trajectories.

// `!(x > 0.0)` is used on purpose: it also rejects NaN. Axis loops index
// several per-axis arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod comparison;
pub mod config;
pub mod error;
pub mod estimates;
pub mod field;
pub mod fixedpoint;
pub mod io;
pub mod model;
pub mod par;
pub mod solver;

pub use error::{Error, Result};
pub use field::{Field, Grid, SpaceTimeSeries};
pub use model::{Nonlinearity, Preset, ProblemSpec};
pub use par::Exec;
pub use solver::{run, SolverConfig, Trajectory};
