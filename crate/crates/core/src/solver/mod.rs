//! Monotone finite-volume discretisation and IMEX time stepping.

pub mod diffusion;
pub mod drift;
pub mod stepper;
pub mod weak;

pub use diffusion::{assemble_diffusion, DiffusionOperator, SolveStats};
pub use drift::{cfl_dt, drift_divergence};
pub use stepper::{
    run, superlevel_levels, BlowUpReason, DtPolicy, NormSeries, Recorder, RunStatus, SolverConfig, StepOutcome, StepRecord, Stepper, Stop,
    Trajectory, LEVEL_EXPONENTS,
};
pub use weak::{weak_residual, BumpTest, TestFunction, ZeroTest};
