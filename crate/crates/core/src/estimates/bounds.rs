//! Closed-form thresholds: time-slicing width, data smallness, and the
//! superlevel decay bound. Constants that have no computable value enter
//! through [`ConstantsConfig`]; outputs depending on them are relative to
//! the assumed values.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// User-set constants. Every entry must be positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Sobolev constant.
    pub sobolev: f64,
    /// Space-time Gagliardo–Nirenberg constant; see [`super::gn_constant_estimate`].
    pub c_gn: f64,
    /// Constant of the linear estimate behind the smallness condition.
    pub c_alpha_q: f64,
    /// Constant of the slicing estimate.
    pub a_const: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            alpha: 1.0,
            beta: 1.0,
            sobolev: 1.0,
            c_gn: super::diagnostics::DEFAULT_C_GN,
            c_alpha_q: 1.0,
            a_const: 1.0,
        }
    }
}

impl ConstantsConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.sobolev, self.c_gn, self.c_alpha_q, self.a_const];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid(format!("all constants must be positive and finite, got {self:?}"));
        }
        if self.alpha > self.beta {
            return invalid(format!("alpha = {} exceeds beta = {}", self.alpha, self.beta));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicingPlan {
    /// Slice width `h` with `A h^{2θ} ‖E‖² M0^{2θ} = 1/4`; `+∞` for a vanishing drift.
    pub h: f64,
    /// `⌈T/h⌉`, at least 1.
    pub slices: usize,
}

/// Width of the time slices on which the drift is absorbed by the diffusion.
pub fn slicing_plan(theta: f64, norm_e: f64, m0: f64, a_const: f64, horizon: f64) -> Result<SlicingPlan> {
    if !(theta > 0.0) {
        return invalid(format!("slicing needs theta > 0, got {theta}"));
    }
    if !(norm_e >= 0.0 && m0 > 0.0 && a_const > 0.0 && horizon > 0.0) {
        return invalid(format!(
            "need ||E|| >= 0, M0 > 0, A > 0, T > 0; got {norm_e}, {m0}, {a_const}, {horizon}"
        ));
    }
    let h = if norm_e == 0.0 {
        f64::INFINITY
    } else {
        let base = 4.0 * a_const * norm_e * norm_e * m0.powf(2.0 * theta);
        base.powf(-1.0 / (2.0 * theta))
    };
    let slices = if h >= horizon {
        1
    } else {
        // guard against h·k landing a rounding error above T
        let k = horizon / h;
        let r = k.round();
        if (k - r).abs() <= 1e-12 * r {
            r as usize
        } else {
            k.ceil() as usize
        }
    };
    Ok(SlicingPlan { h, slices })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smallness {
    /// `‖E‖^{1/θ} (‖f‖ + ‖u0‖)`.
    pub lhs: f64,
    /// `θ / (C(θ+1))^{(θ+1)/θ}`, relative to the assumed `C`.
    pub threshold: f64,
    pub satisfied: bool,
}

/// Smallness condition on the data under which the frozen-drift map has an
/// invariant ball. Norms are taken by the caller: `E` in `L^r` of the
/// cylinder, `f` in `L^q`, `u0` in `L^{q⋆⋆N/(N+2)}`.
pub fn smallness_check(theta: f64, norm_e: f64, norm_f: f64, norm_u0: f64, c: f64) -> Result<Smallness> {
    if !(theta > 0.0 && c > 0.0) {
        return invalid(format!("need theta > 0 and C > 0, got {theta} and {c}"));
    }
    if !(norm_e >= 0.0 && norm_f >= 0.0 && norm_u0 >= 0.0) {
        return invalid("norms must be nonnegative");
    }
    let data = norm_f + norm_u0;
    let lhs = if data == 0.0 { 0.0 } else { norm_e.powf(1.0 / theta) * data };
    let threshold = theta / (c * (theta + 1.0)).powf((theta + 1.0) / theta);
    Ok(Smallness {
        lhs,
        threshold,
        satisfied: lhs <= threshold,
    })
}

/// Superlevel bound `‖E‖²/ρ + ‖u0‖₁/ρ^{1/(2θ)}` from the decay-of-measure
/// argument, at a user-chosen level `ρ`.
pub fn rho_superlevel_bound(norm_e_sq: f64, l1_u0: f64, theta: f64, rho: f64) -> Result<f64> {
    if !(theta > 0.0 && rho > 0.0 && norm_e_sq >= 0.0 && l1_u0 >= 0.0) {
        return invalid("need theta > 0, rho > 0 and nonnegative norms");
    }
    Ok(norm_e_sq / rho + l1_u0 / rho.powf(1.0 / (2.0 * theta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slicing_examples() {
        let p = slicing_plan(0.5, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(p.h, 0.25, max_relative = 1e-15);
        assert_eq!(p.slices, 4);
        let free = slicing_plan(0.5, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(free.h, f64::INFINITY);
        assert_eq!(free.slices, 1);
        let doubled = slicing_plan(0.5, 1.0, 2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(doubled.h, 0.125, max_relative = 1e-15);
        assert_eq!(doubled.slices, 8);
        assert!(slicing_plan(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert_eq!(slicing_plan(0.5, 1e-3, 1.0, 1.0, 1.0).unwrap().slices, 1);
    }

    #[test]
    fn smallness_examples() {
        let s = smallness_check(1.0, 1.0, 0.1, 0.2, 1.0).unwrap();
        assert_relative_eq!(s.threshold, 0.25);
        assert_relative_eq!(s.lhs, 0.3, max_relative = 1e-15);
        assert!(!s.satisfied);
        let zero = smallness_check(0.5, 1e9, 0.0, 0.0, 1.0).unwrap();
        assert!(zero.satisfied);
        assert!(smallness_check(1.0, 1.0, 0.1, 0.1, 1.0).unwrap().satisfied);
    }

    #[test]
    fn rho_bound_matches_formula() {
        assert_relative_eq!(rho_superlevel_bound(2.0, 3.0, 0.5, 4.0).unwrap(), 0.5 + 0.75);
    }

    #[test]
    fn constants_validate() {
        assert!(ConstantsConfig::default().validate().is_ok());
        let bad = ConstantsConfig {
            alpha: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
