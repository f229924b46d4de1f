//! Beta distribution kernel: log-gamma, the regularized incomplete beta
//! function `I_x(a, b)` and its inverse.
//!
//! `I_x` is evaluated with the classic continued fraction (modified Lentz),
//! switching to `1 - I_{1-x}(b, a)` past `x > (a + 1) / (a + b + 2)` where the
//! fraction converges slowly. The prefactor `x^a (1-x)^b / B(a, b)` is formed
//! in log space; when both shape parameters are large it is rewritten around
//! the mean with Stirling corrections so that posteriors built from thousands
//! of counts keep full precision near their centre.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Largest supported `alpha + beta`.
pub const MAX_PARAM_SUM: f64 = 1e7;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const CF_EPS: f64 = f64::EPSILON;
const CF_MAX_ITER: usize = 20_000;
const TINY: f64 = 1e-300;

const PPF_MAX_ITER: usize = 200;
const PPF_FTOL: f64 = 1e-12;
const PPF_XTOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BetaFnError {
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("alpha + beta = {0} exceeds the supported limit of 1e7")]
    OutOfRange(f64),
    #[error("incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})")]
    NoConvergence { x: f64, a: f64, b: f64 },
}

/// Shape parameters of a Beta distribution; both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBetaParams")]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct RawBetaParams {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawBetaParams> for BetaParams {
    type Error = BetaFnError;

    fn try_from(raw: RawBetaParams) -> Result<Self, Self::Error> {
        BetaParams::new(raw.alpha, raw.beta)
    }
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, BetaFnError> {
        // `!(v > 0.0)` also rejects NaN.
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(BetaFnError::Domain {
                name: "alpha",
                value: alpha,
                domain: "(0, inf)",
            });
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(BetaFnError::Domain {
                name: "beta",
                value: beta,
                domain: "(0, inf)",
            });
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// Conjugate update with `n0` extra observations on the alpha side and
    /// `n1` on the beta side.
    pub fn add_counts(&self, n0: f64, n1: f64) -> Self {
        Self {
            alpha: self.alpha + n0,
            beta: self.beta + n1,
        }
    }

    fn check_range(&self) -> Result<(), BetaFnError> {
        let sum = self.alpha + self.beta;
        if sum > MAX_PARAM_SUM {
            return Err(BetaFnError::OutOfRange(sum));
        }
        Ok(())
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Stirling remainder `ln Γ(z) - [(z - 1/2) ln z - z + ln √(2π)]`, valid for `z >= 10`.
fn stirling_correction(z: f64) -> f64 {
    // Bernoulli terms B_2k / (2k (2k - 1)).
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut acc = 0.0;
    for c in C.iter().rev() {
        acc = acc * inv2 + c;
    }
    acc * inv
}

fn ln_gamma_unchecked(z: f64) -> f64 {
    if z == 1.0 || z == 2.0 {
        return 0.0;
    }
    if z < 0.5 {
        // Reflection: Γ(z) Γ(1 - z) = π / sin(πz).
        return (PI / (PI * z).sin()).ln() - ln_gamma_unchecked(1.0 - z);
    }
    if z >= 10.0 {
        return (z - 0.5) * z.ln() - z + LN_SQRT_2PI + stirling_correction(z);
    }
    let z = z - 1.0;
    let t = z + LANCZOS_G + 0.5;
    let mut series = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        series += c / (z + i as f64);
    }
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + series.ln()
}

/// Natural log of the gamma function for `z > 0`.
pub fn log_gamma(z: f64) -> Result<f64, BetaFnError> {
    if !(z.is_finite() && z > 0.0) {
        return Err(BetaFnError::Domain {
            name: "z",
            value: z,
            domain: "(0, inf)",
        });
    }
    Ok(ln_gamma_unchecked(z))
}

/// `ln B(a, b)`.
pub fn log_beta(p: BetaParams) -> f64 {
    let (a, b) = (p.alpha, p.beta);
    if a.min(b) >= 10.0 {
        let s = a + b;
        let delta = stirling_correction(a) + stirling_correction(b) - stirling_correction(s);
        // ln B = ln √(2π) + (a - 1/2) ln a + (b - 1/2) ln b - (s - 1/2) ln s + delta
        return LN_SQRT_2PI + (a - 0.5) * (a / s).ln() + (b - 0.5) * (b / s).ln() - 0.5 * s.ln()
            + delta;
    }
    ln_gamma_unchecked(a) + ln_gamma_unchecked(b) - ln_gamma_unchecked(a + b)
}

/// `ln[x^a (1-x)^b / B(a, b)]` for `0 < x < 1`.
fn ln_prefactor(x: f64, a: f64, b: f64) -> f64 {
    if a.min(b) >= 10.0 {
        let s = a + b;
        let p = a / s;
        let q = b / s;
        let delta = stirling_correction(a) + stirling_correction(b) - stirling_correction(s);
        let left = a * ((x - p) / p).ln_1p();
        let right = b * ((p - x) / q).ln_1p();
        return left + right + 0.5 * (a * q / (2.0 * PI)).ln() - delta;
    }
    a * x.ln() + b * (-x).ln_1p() - log_beta(BetaParams { alpha: a, beta: b })
}

/// Continued fraction for `I_x(a, b)`; converges fast for `x < (a+1)/(a+b+2)`.
fn incbeta_cf(x: f64, a: f64, b: f64) -> Result<f64, BetaFnError> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() <= CF_EPS {
            return Ok(h);
        }
    }
    Err(BetaFnError::NoConvergence { x, a, b })
}

fn check_unit(name: &'static str, v: f64) -> Result<(), BetaFnError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(BetaFnError::Domain {
            name,
            value: v,
            domain: "[0, 1]",
        });
    }
    Ok(())
}

/// Regularized incomplete beta `I_x(alpha, beta)`, the Beta CDF.
pub fn beta_cdf(x: f64, p: BetaParams) -> Result<f64, BetaFnError> {
    check_unit("x", x)?;
    p.check_range()?;
    cdf_unchecked(x, p.alpha, p.beta)
}

fn cdf_unchecked(x: f64, a: f64, b: f64) -> Result<f64, BetaFnError> {
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let v = if x > (a + 1.0) / (a + b + 2.0) {
        let y = 1.0 - x;
        1.0 - ln_prefactor(y, b, a).exp() * incbeta_cf(y, b, a)? / b
    } else {
        ln_prefactor(x, a, b).exp() * incbeta_cf(x, a, b)? / a
    };
    Ok(v.clamp(0.0, 1.0))
}

/// Beta density at `x`.
pub fn beta_pdf(x: f64, p: BetaParams) -> Result<f64, BetaFnError> {
    check_unit("x", x)?;
    p.check_range()?;
    Ok(pdf_unchecked(x, p.alpha, p.beta))
}

fn pdf_unchecked(x: f64, a: f64, b: f64) -> f64 {
    if x == 0.0 || x == 1.0 {
        let edge = if x == 0.0 { a } else { b };
        return match edge {
            e if e < 1.0 => f64::INFINITY,
            1.0 => (-log_beta(BetaParams { alpha: a, beta: b })).exp(),
            _ => 0.0,
        };
    }
    (ln_prefactor(x, a, b) - x.ln() - (-x).ln_1p()).exp()
}

/// Normal-approximation starting point for the quantile (Abramowitz and
/// Stegun 26.5.22), for `a, b >= 1`.
fn initial_guess(q: f64, a: f64, b: f64) -> Option<f64> {
    if a < 1.0 || b < 1.0 {
        return None;
    }
    let pp = if q < 0.5 { q } else { 1.0 - q };
    let t = (-2.0 * pp.ln()).sqrt();
    let mut z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t;
    if q < 0.5 {
        z = -z;
    }
    let al = (z * z - 3.0) / 6.0;
    let h = 2.0 / (1.0 / (2.0 * a - 1.0) + 1.0 / (2.0 * b - 1.0));
    let w = z * (al + h).sqrt() / h
        - (1.0 / (2.0 * b - 1.0) - 1.0 / (2.0 * a - 1.0)) * (al + 5.0 / 6.0 - 2.0 / (3.0 * h));
    let x = a / (a + b * (2.0 * w).exp());
    (x > 0.0 && x < 1.0).then_some(x)
}

/// Percent point function (inverse CDF) of the Beta distribution.
///
/// Newton iteration from the mean, kept inside a shrinking bracket; a step
/// that leaves the bracket or fails to halve the residual is replaced by
/// bisection.
pub fn beta_ppf(q: f64, p: BetaParams) -> Result<f64, BetaFnError> {
    check_unit("q", q)?;
    p.check_range()?;
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(1.0);
    }
    let (a, b) = (p.alpha, p.beta);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = initial_guess(q, a, b).unwrap_or_else(|| p.mean());
    let mut prev_resid = f64::INFINITY;
    for _ in 0..PPF_MAX_ITER {
        let f = cdf_unchecked(x, a, b)? - q;
        if f.abs() <= PPF_FTOL {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= PPF_XTOL {
            return Ok(x);
        }
        let slope = pdf_unchecked(x, a, b);
        let newton = x - f / slope;
        let stalled = f.abs() > 0.5 * prev_resid;
        x = if newton > lo && newton < hi && !stalled {
            newton
        } else {
            0.5 * (lo + hi)
        };
        prev_resid = f.abs();
    }
    Ok(x)
}
