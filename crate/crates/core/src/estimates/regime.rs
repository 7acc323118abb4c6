//! Which existence regime a parameter set falls into.
//!
//! Every condition is an inequality between rationals, evaluated exactly.
//! Decimal inputs are read as the exact decimal they spell, so `0.3333333`
//! is strictly below `1/3`.

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::exponents::{int, parse_rational, rational_to_f64, ExactExponents, Extended};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Global existence with spatial integrability of the drift.
    GlobalSmallTheta,
    /// Existence up to a finite time for large growth exponents.
    LocalLargeTheta,
    /// Global existence with space-time integrability of the drift.
    ParabolicSmallTheta,
    /// Existence under a smallness condition on the data.
    ParabolicLargeData,
    None,
}

impl Regime {
    /// Lower is stronger.
    fn rank(self) -> u8 {
        match self {
            Regime::GlobalSmallTheta => 0,
            Regime::ParabolicSmallTheta => 1,
            Regime::LocalLargeTheta => 2,
            Regime::ParabolicLargeData => 3,
            Regime::None => 4,
        }
    }

    pub fn condition(self) -> &'static str {
        match self {
            Regime::GlobalSmallTheta => "1/r + theta <= 1/N",
            Regime::LocalLargeTheta => "1/r + theta/mu < 1/N",
            Regime::ParabolicSmallTheta => "1/r + theta <= 1/(N+2)",
            Regime::ParabolicLargeData => "1/r + theta/q** <= 1/(N+2) with small data",
            Regime::None => "none",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

/// Exact inputs. `r` is the drift integrability (spatial for the first two
/// regimes, space-time for the last two); `q` defaults to `2(N+2)/(N+4)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegimeQuery {
    pub dim: usize,
    pub theta: BigRational,
    pub r: Extended,
    pub mu: BigRational,
    pub q: Option<BigRational>,
}

impl RegimeQuery {
    /// Parse decimal or fractional literals; `r` accepts `inf`.
    pub fn parse(dim: usize, theta: &str, r: &str, mu: &str, q: Option<&str>) -> Result<Self> {
        Ok(RegimeQuery {
            dim,
            theta: parse_rational(theta)?,
            r: r.parse()?,
            mu: parse_rational(mu)?,
            q: q.map(parse_rational).transpose()?,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return invalid(format!("dimension must be 1, 2 or 3, got {}", self.dim));
        }
        if self.theta < BigRational::zero() {
            return invalid("theta must be >= 0");
        }
        if self.mu < BigRational::one() {
            return invalid("mu must be >= 1");
        }
        if let Extended::Finite(r) = &self.r {
            if *r <= BigRational::zero() {
                return invalid("r must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck {
    pub regime: Regime,
    pub condition: String,
    pub holds: bool,
    /// Threshold minus the left-hand side; `None` when a range precondition fails.
    pub slack: Option<f64>,
    /// Failed precondition, if any (e.g. `r` not above `N`).
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// Strongest regime whose condition holds.
    pub regime: Regime,
    pub binding_condition: String,
    /// Slack of the designated regime, or of the closest miss when none holds.
    pub slack: f64,
    /// Exact slack as a reduced fraction.
    pub slack_exact: String,
    pub holding: Vec<Regime>,
    pub checks: Vec<RegimeCheck>,
}

struct Eval {
    regime: Regime,
    holds: bool,
    slack: Option<BigRational>,
    note: Option<String>,
}

fn r_exceeds(r: &Extended, bound: &BigRational) -> bool {
    match r {
        Extended::Infinite => true,
        Extended::Finite(v) => v > bound,
    }
}

pub fn classify_regime(query: &RegimeQuery) -> Result<RegimeReport> {
    query.validate()?;
    let n = int(query.dim as i64);
    let n2 = &n + int(2);
    let inv_r = query.r.recip()?;
    let theta = &query.theta;
    let q = query.q.clone().unwrap_or_else(|| int(2) * &n2 / (&n + int(4)));
    let exps = ExactExponents::new(query.dim, q)?;
    let pos_theta = *theta > BigRational::zero();

    let mut evals = Vec::with_capacity(4);

    // spatial drift integrability: r > N
    let spatial_ok = r_exceeds(&query.r, &n);
    let spatial_note = (!spatial_ok).then(|| "requires r > N".to_string());
    {
        let slack = n.recip() - (&inv_r + theta);
        let holds = spatial_ok && pos_theta && slack >= BigRational::zero();
        evals.push(Eval {
            regime: Regime::GlobalSmallTheta,
            holds,
            slack: spatial_ok.then_some(slack),
            note: spatial_note.clone().or_else(|| (!pos_theta).then(|| "requires theta > 0".into())),
        });
    }
    {
        let mu_ok = query.mu > BigRational::one();
        let slack = n.recip() - (&inv_r + theta / &query.mu);
        let holds = spatial_ok && mu_ok && pos_theta && slack > BigRational::zero();
        evals.push(Eval {
            regime: Regime::LocalLargeTheta,
            holds,
            slack: spatial_ok.then_some(slack),
            note: spatial_note
                .clone()
                .or_else(|| (!mu_ok).then(|| "requires mu > 1".into()))
                .or_else(|| (!pos_theta).then(|| "requires theta > 0".into())),
        });
    }
    {
        let ok = r_exceeds(&query.r, &n2);
        let slack = n2.recip() - (&inv_r + theta);
        evals.push(Eval {
            regime: Regime::ParabolicSmallTheta,
            holds: ok && slack >= BigRational::zero(),
            slack: ok.then_some(slack),
            note: (!ok).then(|| "requires r > N+2".into()),
        });
    }
    {
        let ok = r_exceeds(&query.r, &n2);
        let q_lo = int(2) * &n2 / (&n + int(4));
        let q_ok = exps.q >= q_lo;
        let slack = n2.recip() - (&inv_r + theta / &exps.q_star_star);
        evals.push(Eval {
            regime: Regime::ParabolicLargeData,
            holds: ok && q_ok && pos_theta && slack >= BigRational::zero(),
            slack: ok.then_some(slack),
            note: if !ok {
                Some("requires r > N+2".into())
            } else if !q_ok {
                Some("requires q >= 2(N+2)/(N+4)".into())
            } else if !pos_theta {
                Some("requires theta > 0".into())
            } else {
                None
            },
        });
    }

    let mut holding: Vec<Regime> = evals.iter().filter(|e| e.holds).map(|e| e.regime).collect();
    holding.sort_by_key(|r| r.rank());
    let designated = holding.first().copied().unwrap_or(Regime::None);
    let chosen = if designated == Regime::None {
        evals
            .iter()
            .filter_map(|e| e.slack.as_ref().map(|s| (e, s)))
            .max_by(|a, b| a.1.cmp(b.1))
    } else {
        evals
            .iter()
            .find(|e| e.regime == designated)
            .and_then(|e| e.slack.as_ref().map(|s| (e, s)))
    };
    let (binding_condition, slack) = match chosen {
        Some((e, s)) => (e.regime.condition().to_string(), s.clone()),
        None => ("none".to_string(), BigRational::zero()),
    };

    let checks = evals
        .iter()
        .map(|e| RegimeCheck {
            regime: e.regime,
            condition: e.regime.condition().to_string(),
            holds: e.holds,
            slack: e.slack.as_ref().map(rational_to_f64),
            note: e.note.clone(),
        })
        .collect();
    Ok(RegimeReport {
        regime: designated,
        binding_condition,
        slack: rational_to_f64(&slack),
        slack_exact: slack.to_string(),
        holding,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(theta: &str, r: &str, mu: &str) -> RegimeReport {
        classify_regime(&RegimeQuery::parse(3, theta, r, mu, None).unwrap()).unwrap()
    }

    #[test]
    fn exact_threshold_is_global() {
        let rep = classify("1/3", "inf", "1");
        assert_eq!(rep.regime, Regime::GlobalSmallTheta);
        assert_eq!(rep.slack, 0.0);
        assert_eq!(rep.slack_exact, "0");
        assert_eq!(rep.binding_condition, "1/r + theta <= 1/N");
    }

    #[test]
    fn truncated_decimal_sits_inside_the_global_regime() {
        let rep = classify("0.3333333", "inf", "1");
        assert_eq!(rep.regime, Regime::GlobalSmallTheta);
        assert!(rep.slack > 0.0 && rep.slack < 1e-7);
    }

    #[test]
    fn large_theta_is_local() {
        let rep = classify("1", "inf", "4");
        assert_eq!(rep.regime, Regime::LocalLargeTheta);
        assert_eq!(rep.slack_exact, "1/12");
        assert!((rep.slack - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn too_large_theta_is_none() {
        let rep = classify("1", "4", "2");
        assert_eq!(rep.regime, Regime::None);
        assert!(rep.holding.is_empty());
        assert!(rep.slack < 0.0);
        let local = rep.checks.iter().find(|c| c.regime == Regime::LocalLargeTheta).unwrap();
        assert!((local.slack.unwrap() - (1.0 / 3.0 - 0.75)).abs() < 1e-15);
    }

    #[test]
    fn several_regimes_report_the_strongest() {
        let rep = classify("1/10", "inf", "2");
        assert_eq!(rep.regime, Regime::GlobalSmallTheta);
        assert!(rep.holding.contains(&Regime::ParabolicSmallTheta));
        assert!(rep.holding.contains(&Regime::LocalLargeTheta));
    }

    #[test]
    fn drift_integrability_below_dimension_fails_spatial_regimes() {
        let rep = classify("0", "2", "1");
        let g = rep.checks.iter().find(|c| c.regime == Regime::GlobalSmallTheta).unwrap();
        assert!(!g.holds);
        assert!(g.slack.is_none());
    }

    #[test]
    fn slack_is_continuous_in_theta() {
        let eps = 1e-9;
        for t in [0.2, 1.0 / 3.0 - 2e-9, 1.0 / 3.0 + 2e-9, 0.5] {
            let at = |x: f64| classify(&format!("{x:.15}"), "inf", "1");
            let a = at(t - eps);
            let b = at(t + eps);
            if a.regime != b.regime {
                // ∂slack/∂θ = −1 for the global condition
                assert!(a.slack.abs() < 2.0 * eps + 1e-15 || b.slack.abs() < 2.0 * eps + 1e-15);
            }
        }
    }
}
