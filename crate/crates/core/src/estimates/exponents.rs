//! Parabolic Sobolev exponents and the exponent bookkeeping of the
//! regularity estimates, in floating point and in exact rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Exponents derived from the dimension `N` and the source integrability `q`,
/// plus the decay exponent for a pair `(μ, m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentTable {
    pub dim: usize,
    pub q: f64,
    /// `+∞` encodes `1/r = 0`.
    pub r: f64,
    pub theta: f64,
    pub mu: f64,
    pub m: f64,
    /// `(N+2)q/(N+2−q)`.
    pub q_star: f64,
    /// `(N+2)q/(N+2−2q)`.
    pub q_star_star: f64,
    /// `(qN−2N−4+4q)/(2(N+2−2q))`, the power used in the slicing estimate.
    pub gamma: f64,
    /// `2(N+2)/N`.
    pub sigma: f64,
    /// Hölder conjugate of `sigma`, `2(N+2)/(N+4)`.
    pub sigma_prime: f64,
    /// `(N/2)(1/μ − 1/m)`; the predicted decay is `t^{−decay_exponent}`.
    pub decay_exponent: f64,
    /// `|2γ+2 − q⋆⋆N/(N+2)|`.
    pub identity_gap_energy: f64,
    /// `|q′(2γ+1) − q⋆⋆|`; zero by convention at `q = 1` where `q′ = ∞` and `2γ+1 = 0`.
    pub identity_gap_dual: f64,
}

/// Largest admissible `q` (exclusive): `q⋆⋆` has a pole at `(N+2)/2`.
pub fn q_upper(dim: usize) -> f64 {
    (dim as f64 + 2.0) / 2.0
}

pub fn sigma(dim: usize) -> f64 {
    2.0 * (dim as f64 + 2.0) / dim as f64
}

pub fn sigma_prime(dim: usize) -> f64 {
    2.0 * (dim as f64 + 2.0) / (dim as f64 + 4.0)
}

pub fn q_star(dim: usize, q: f64) -> f64 {
    let n2 = dim as f64 + 2.0;
    n2 * q / (n2 - q)
}

pub fn q_star_star(dim: usize, q: f64) -> f64 {
    let n2 = dim as f64 + 2.0;
    n2 * q / (n2 - 2.0 * q)
}

pub fn gamma(dim: usize, q: f64) -> f64 {
    let n = dim as f64;
    (q * n - 2.0 * n - 4.0 + 4.0 * q) / (2.0 * (n + 2.0 - 2.0 * q))
}

pub fn decay_exponent(dim: usize, mu: f64, m: f64) -> f64 {
    0.5 * dim as f64 * (1.0 / mu - 1.0 / m)
}

fn check_dim(dim: usize) -> Result<()> {
    if !(1..=3).contains(&dim) {
        return invalid(format!("dimension must be 1, 2 or 3, got {dim}"));
    }
    Ok(())
}

fn check_q(dim: usize, q: f64) -> Result<()> {
    if !(q >= 1.0 && q < q_upper(dim)) {
        return invalid(format!("q must lie in [1, {}) for N = {dim}, got {q}", q_upper(dim)));
    }
    Ok(())
}

impl ExponentTable {
    pub fn new(dim: usize, q: f64, r: f64, theta: f64, mu: f64, m: f64) -> Result<Self> {
        check_dim(dim)?;
        check_q(dim, q)?;
        if !(theta >= 0.0) || !(mu >= 1.0) || !(m >= mu) || !(r > 0.0) {
            return invalid(format!(
                "need theta >= 0, 1 <= mu <= m and r > 0, got theta={theta}, mu={mu}, m={m}, r={r}"
            ));
        }
        let n = dim as f64;
        let qss = q_star_star(dim, q);
        let g = gamma(dim, q);
        let identity_gap_energy = (2.0 * g + 2.0 - qss * n / (n + 2.0)).abs();
        let identity_gap_dual = if q > 1.0 {
            (q / (q - 1.0) * (2.0 * g + 1.0) - qss).abs()
        } else {
            0.0
        };
        Ok(ExponentTable {
            dim,
            q,
            r,
            theta,
            mu,
            m,
            q_star: q_star(dim, q),
            q_star_star: qss,
            gamma: g,
            sigma: sigma(dim),
            sigma_prime: sigma_prime(dim),
            decay_exponent: decay_exponent(dim, mu, m),
            identity_gap_energy,
            identity_gap_dual,
        })
    }

    /// Largest of the two identity gaps, scaled by `max(1, q⋆⋆)`.
    pub fn identity_error(&self) -> f64 {
        self.identity_gap_energy.max(self.identity_gap_dual) / self.q_star_star.max(1.0)
    }
}

/// A nonnegative extended rational: exact value or `+∞`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Extended {
    Finite(BigRational),
    Infinite,
}

impl Extended {
    /// `1/x`, with `1/∞ = 0`.
    pub fn recip(&self) -> Result<BigRational> {
        match self {
            Extended::Infinite => Ok(BigRational::zero()),
            Extended::Finite(v) if v.is_zero() => invalid("reciprocal of zero"),
            Extended::Finite(v) => Ok(v.recip()),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Extended::Infinite => f64::INFINITY,
            Extended::Finite(v) => rational_to_f64(v),
        }
    }

    pub fn finite(&self) -> Option<&BigRational> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }
}

impl std::str::FromStr for Extended {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity" | "+inf" | "∞") {
            return Ok(Extended::Infinite);
        }
        parse_rational(t).map(Extended::Finite)
    }
}

/// Exact value of a decimal literal (`0.3333333`, `-2.5e-3`) or fraction (`1/3`).
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let bad = || Error::Parse(format!("not a rational number: {s:?}"));
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n = parse_rational(num)?;
        let d = parse_rational(den)?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(n / d);
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all: String = format!("{int_part}{frac_part}");
    let numer: BigInt = all.parse().map_err(|_| bad())?;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(numer);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if neg { -value } else { value })
}

/// Exact rational equal to a finite `f64`.
pub fn rational_from_f64(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).map_or_else(|| invalid(format!("{x} is not finite")), Ok)
}

pub fn rational_to_f64(v: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    v.to_f64()
        .unwrap_or_else(|| if v.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
}

pub(crate) fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// The same exponents in exact arithmetic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactExponents {
    pub dim: usize,
    pub q: BigRational,
    pub q_star: BigRational,
    pub q_star_star: BigRational,
    pub gamma: BigRational,
    pub sigma: BigRational,
    pub sigma_prime: BigRational,
}

impl ExactExponents {
    pub fn new(dim: usize, q: BigRational) -> Result<Self> {
        check_dim(dim)?;
        let n = int(dim as i64);
        let n2 = &n + int(2);
        if q < BigRational::one() || q >= &n2 / int(2) {
            return invalid(format!("q must lie in [1, (N+2)/2) for N = {dim}"));
        }
        let q_star = &n2 * &q / (&n2 - &q);
        let q_star_star = &n2 * &q / (&n2 - int(2) * &q);
        let gamma = (&q * &n - int(2) * &n - int(4) + int(4) * &q) / (int(2) * (&n2 - int(2) * &q));
        let sigma = int(2) * &n2 / &n;
        let sigma_prime = int(2) * &n2 / (&n + int(4));
        Ok(ExactExponents {
            dim,
            q,
            q_star,
            q_star_star,
            gamma,
            sigma,
            sigma_prime,
        })
    }

    /// Both identities, `2γ+2 = q⋆⋆N/(N+2)` and (for `q > 1`) `q′(2γ+1) = q⋆⋆`.
    pub fn identities_hold(&self) -> bool {
        let n = int(self.dim as i64);
        let two = int(2);
        let energy = &two * &self.gamma + &two == &self.q_star_star * &n / (&n + &two);
        let dual = if self.q > BigRational::one() {
            let q_dual = &self.q / (&self.q - BigRational::one());
            q_dual * (&two * &self.gamma + BigRational::one()) == self.q_star_star
        } else {
            true
        };
        energy && dual
    }
}
