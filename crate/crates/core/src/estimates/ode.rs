//! Scalar ODE comparison bounds and a reference integrator.
//!
//! The norm `y(t) = ∫|u|^μ` obeys differential inequalities of the form
//! `y' ≤ C y + C_m y^{1+d} − K y^{1+a}`; the integrator solves the equality
//! case so closed-form bounds can be checked against it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Blow-up threshold for the integrated solution.
pub const BLOWUP_LEVEL: f64 = 1e12;
const RTOL: f64 = 1e-10;
const ATOL: f64 = 1e-14;

/// `y(t) ≤ (1/(aK))^{1/a} e^{Ct} / t^{1/a}` for any positive solution of `y' + K y^{1+a} ≤ C y`.
pub fn ode_bound(a: f64, k: f64, c: f64, t: f64) -> Result<f64> {
    if !(a > 0.0 && k > 0.0 && c >= 0.0) {
        return invalid(format!("need a > 0, K > 0, C >= 0; got a={a}, K={k}, C={c}"));
    }
    if !(t > 0.0) {
        return invalid(format!("bound only holds for t > 0, got {t}"));
    }
    // log form avoids overflow for small a
    let ln = -(a * k).ln() / a + c * t - t.ln() / a;
    Ok(ln.exp())
}

/// Right-hand side `C y + C_m y^{1+d} − K y^{1+a}` (for `y ≥ 0`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeRhs {
    pub k: f64,
    pub c: f64,
    pub a: f64,
    pub d: f64,
    pub c_m: f64,
}

impl OdeRhs {
    /// `y' = C y − K y^{1+a}`.
    pub fn damped(k: f64, c: f64, a: f64) -> Self {
        OdeRhs { k, c, a, d: 0.0, c_m: 0.0 }
    }

    /// `y' = C_m y^{1+b}`.
    pub fn explosive(c_m: f64, b: f64) -> Self {
        OdeRhs {
            k: 0.0,
            c: 0.0,
            a: 0.0,
            d: b,
            c_m,
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let y = y.max(0.0);
        let mut v = self.c * y;
        if self.c_m != 0.0 {
            v += self.c_m * y * y.powf(self.d);
        }
        if self.k != 0.0 {
            v -= self.k * y * y.powf(self.a);
        }
        v
    }

    fn validate(&self) -> Result<()> {
        let all = [self.k, self.c, self.a, self.d, self.c_m];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid(format!("ODE coefficients must be finite and >= 0, got {self:?}"));
        }
        Ok(())
    }

    /// `∫_{y_from}^∞ dy / F(y)`, the time left before `y` escapes to infinity;
    /// `None` when `F` stops being positive (the solution then stays bounded).
    pub fn escape_time(&self, y_from: f64) -> Option<f64> {
        // substitute y = y_from·e^s: dt = y/F(y) ds, integrand decays like e^{−d s}
        let ln0 = y_from.ln();
        let integrand = |s: f64| -> Option<f64> {
            let lny = ln0 + s;
            let mut f = self.c;
            if self.c_m != 0.0 {
                f += self.c_m * (self.d * lny).exp();
            }
            if self.k != 0.0 {
                f -= self.k * (self.a * lny).exp();
            }
            (f > 0.0 && f.is_finite()).then(|| 1.0 / f)
        };
        if self.c_m == 0.0 || self.d <= 0.0 {
            return None;
        }
        // Simpson on panels of width h until the remainder ∫_S^∞ ≈ integrand(S)/d is negligible
        let h = (0.05 / self.d).min(1.0);
        let mut total = 0.0;
        let mut s = 0.0;
        let mut left = integrand(0.0)?;
        for _ in 0..200_000 {
            let mid = integrand(s + 0.5 * h)?;
            let right = integrand(s + h)?;
            total += h / 6.0 * (left + 4.0 * mid + right);
            s += h;
            left = right;
            let tail = right / self.d;
            if tail <= 1e-13 * total {
                return Some(total + tail);
            }
        }
        Some(total + left / self.d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUpHit {
    /// First time the integrated solution exceeded [`BLOWUP_LEVEL`].
    pub hit_time: f64,
    /// `hit_time` plus the remaining escape time from the hit level.
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub blowup: Option<BlowUpHit>,
    /// Set when the step size collapsed before the end: `(last good time, failed time)`.
    pub collapse: Option<(f64, f64)>,
    pub steps: usize,
}

/// `n` log-spaced times from `t_min` to `t_max` inclusive.
pub fn log_grid(t_min: f64, t_max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t_max];
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

// Dormand–Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One DOPRI5 step; returns `(y_next, error_estimate)`.
fn dopri_step(f: &impl Fn(f64) -> f64, y: f64, h: f64) -> (f64, f64) {
    let mut k = [0.0; 7];
    k[0] = f(y);
    for s in 1..7 {
        let yi = y + h * (0..s).map(|j| A[s][j] * k[j]).sum::<f64>();
        k[s] = f(yi);
    }
    let y5 = y + h * (0..7).map(|j| B5[j] * k[j]).sum::<f64>();
    let y4 = y + h * (0..7).map(|j| B4[j] * k[j]).sum::<f64>();
    (y5, (y5 - y4).abs())
}

/// Integrate `y' = rhs(y)` from `y(0) = y0`, reporting `y` at each of the
/// increasing `sample_times`. Stops early on blow-up or step collapse.
pub fn ode_integrate(rhs: &OdeRhs, y0: f64, sample_times: &[f64]) -> Result<OdeSolution> {
    rhs.validate()?;
    if !(y0 > 0.0 && y0.is_finite()) {
        return invalid(format!("initial value must be positive, got {y0}"));
    }
    if sample_times.windows(2).any(|w| !(w[1] > w[0])) || sample_times.first().is_some_and(|&t| t < 0.0) {
        return invalid("sample times must be nonnegative and strictly increasing");
    }
    let f = |y: f64| rhs.eval(y);
    let mut out = OdeSolution {
        times: Vec::with_capacity(sample_times.len()),
        values: Vec::with_capacity(sample_times.len()),
        blowup: None,
        collapse: None,
        steps: 0,
    };
    let mut t = 0.0;
    let mut y = y0;
    let scale0 = f(y0).abs().max(1e-300);
    let mut h = (0.01 * y0 / scale0).clamp(1e-12, 1e-2);

    for &target in sample_times {
        while t < target {
            let step = h.min(target - t);
            let (yn, err) = dopri_step(&f, y, step);
            let tol = ATOL + RTOL * y.abs().max(yn.abs());
            let ratio = if yn.is_finite() { err / tol } else { f64::INFINITY };
            if ratio <= 1.0 {
                t = if step == target - t { target } else { t + step };
                y = yn;
                out.steps += 1;
                if y > BLOWUP_LEVEL {
                    out.blowup = Some(BlowUpHit {
                        hit_time: t,
                        estimate: t + rhs.escape_time(y).unwrap_or(f64::INFINITY),
                    });
                    return Ok(out);
                }
            }
            let factor = if ratio == 0.0 {
                5.0
            } else if ratio.is_finite() {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                0.2
            };
            // a step clipped to land on a sample says nothing about the next one
            if !(ratio <= 1.0 && step < h) {
                h = step * factor;
            }
            if h < 1e-15 * t.max(1e-300) || h < 1e-300 {
                out.collapse = Some((t, t + step));
                if rhs.c_m > 0.0 {
                    out.blowup = Some(BlowUpHit {
                        hit_time: t,
                        estimate: t + rhs.escape_time(y).unwrap_or(f64::INFINITY),
                    });
                }
                return Ok(out);
            }
        }
        out.times.push(target);
        out.values.push(y);
    }
    Ok(out)
}

/// Blow-up exponent and time of the comparison ODE `y' = C_μ y^{1+b}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupTime {
    /// `2rθ/(μr − μN − Nrθ)`, or `2θ/(μ − Nθ)` for `r = ∞`.
    pub b: f64,
    /// `1/(b C_μ ‖u0‖_μ^{bμ})`.
    pub t_star: f64,
}

/// `r = f64::INFINITY` means `1/r = 0`.
pub fn blowup_time(mu: f64, r: f64, dim: usize, theta: f64, c_mu: f64, norm_u0: f64) -> Result<BlowupTime> {
    let n = dim as f64;
    if !(mu > 1.0 && theta > 0.0 && c_mu > 0.0 && norm_u0 > 0.0 && r > n) {
        return invalid(format!(
            "need mu > 1, theta > 0, C_mu > 0, ||u0|| > 0 and r > N; got mu={mu}, theta={theta}, C_mu={c_mu}, norm={norm_u0}, r={r}"
        ));
    }
    // b = 2θ / (μ − μN/r − Nθ)
    let denom = mu - mu * n / r - n * theta;
    if !(denom > 0.0) {
        return Err(Error::Regime(format!(
            "1/r + theta/mu < 1/N fails (mu - mu N/r - N theta = {denom}); no finite blow-up horizon"
        )));
    }
    let b = 2.0 * theta / denom;
    let y0_b = (b * mu * norm_u0.ln()).exp();
    Ok(BlowupTime {
        b,
        t_star: 1.0 / (b * c_mu * y0_b),
    })
}
