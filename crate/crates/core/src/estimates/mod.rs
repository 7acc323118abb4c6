//! Closed-form exponents, thresholds and comparison bounds, and post-hoc
//! diagnostics that check trajectories against them.

mod bounds;
mod diagnostics;
mod exponents;
mod ode;
mod regime;

pub use bounds::{rho_superlevel_bound, slicing_plan, smallness_check, ConstantsConfig, SlicingPlan, Smallness};
pub use diagnostics::{
    decay_window, fit_decay_exponent, fit_power_law, gn_constant_estimate, gn_ratio, gradient_marcinkiewicz, run_diagnostics,
    trajectory_gn_ratio, Check, DecayFit, DiagnosticsReport, GnCheck, InequalityCheck, NormColumn, PowerFit, TimeSlack, DEFAULT_C_GN,
    INEQ_ABS_TOL, INEQ_REL_TOL, MASS_TOL,
};
pub use exponents::{
    decay_exponent, gamma, parse_rational, q_star, q_star_star, q_upper, rational_from_f64, rational_to_f64, sigma, sigma_prime,
    ExactExponents, ExponentTable, Extended,
};
pub use ode::{blowup_time, log_grid, ode_bound, ode_integrate, BlowUpHit, BlowupTime, OdeRhs, OdeSolution, BLOWUP_LEVEL};
pub use regime::{classify_regime, Regime, RegimeCheck, RegimeQuery, RegimeReport};
