//! Exponential integral and error function.
//!
//! `Ei` and `erf` are the only special functions needed by the sampling
//! formulas. `ein` is the entire part of the exponential integral,
//! `Ein(x) = γ + ln x + E1(x)`, which lets callers combine `Ei` terms
//! without forming `ln x` differences near zero.

use crate::error::{Error, Result};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SERIES_CROSSOVER: f64 = 6.0;
const ASYMPTOTIC_START: f64 = 40.0;

/// Stopping rules for the series and continued fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_terms: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-300,
            rel_tol: 1e-17,
            max_terms: 1000,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(Error::param("abs_tol", "must be positive"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::param("rel_tol", "must be positive"));
        }
        if self.max_terms == 0 {
            return Err(Error::param("max_terms", "must be at least 1"));
        }
        Ok(())
    }

    fn converged(&self, term: f64, sum: f64) -> bool {
        term.abs() <= self.abs_tol + self.rel_tol * sum.abs()
    }
}

/// The exponential integral `Ei(x) = -∫_{-x}^∞ e^{-t}/t dt`.
///
/// Negative arguments with `|x| <= 6` use the power series, below that the
/// continued fraction of `E1`. Positive arguments use the power series up to
/// 40 and the asymptotic expansion beyond.
pub fn expint_ei(x: f64) -> Result<f64> {
    expint_ei_with(x, &ToleranceConfig::default())
}

pub fn expint_ei_with(x: f64, tol: &ToleranceConfig) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain("Ei is undefined for NaN".into()));
    }
    if x == 0.0 {
        return Err(Error::Domain("Ei has a logarithmic singularity at 0".into()));
    }
    if x == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if x < -SERIES_CROSSOVER {
        return Ok(-e1_continued_fraction(-x, tol));
    }
    if x > ASYMPTOTIC_START {
        return Ok(ei_asymptotic(x, tol));
    }
    Ok(EULER_GAMMA + x.abs().ln() + ein_tail_series(x, tol))
}

/// `Σ_{n≥1} x^n / (n·n!)`.
fn ein_tail_series(x: f64, tol: &ToleranceConfig) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for n in 1..=tol.max_terms {
        let nf = n as f64;
        term *= x / nf;
        let contrib = term / nf;
        sum += contrib;
        if tol.converged(contrib, sum) {
            break;
        }
    }
    sum
}

fn e1_continued_fraction(z: f64, tol: &ToleranceConfig) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = z + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=tol.max_terms {
        let an = -((i * i) as f64);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        h *= delta;
        if (delta - 1.0).abs() <= tol.rel_tol.max(f64::EPSILON) {
            break;
        }
    }
    h * (-z).exp()
}

fn ei_asymptotic(x: f64, tol: &ToleranceConfig) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=tol.max_terms {
        let next = term * k as f64 / x;
        if next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
        if tol.converged(term, sum) {
            break;
        }
    }
    x.exp() / x * sum
}

/// The entire exponential integral `Ein(x) = Σ_{n≥1} (-1)^{n+1} x^n / (n·n!)`.
///
/// For `x > 0` this equals `γ + ln x - Ei(-x)`, so
/// `Ei(-x) = γ + ln x - Ein(x)` with the divergent part isolated.
pub fn ein(x: f64) -> f64 {
    let tol = ToleranceConfig::default();
    if x <= SERIES_CROSSOVER {
        return -ein_tail_series(-x, &tol);
    }
    if x == f64::INFINITY {
        return f64::INFINITY;
    }
    EULER_GAMMA + x.ln() + e1_continued_fraction(x, &tol)
}

/// The error function.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax <= 3.0 {
        erf_series(ax)
    } else {
        1.0 - erfc_continued_fraction(ax)
    };
    v.copysign(x)
}

/// The complementary error function `1 - erf(x)`.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 3.0 {
        erfc_continued_fraction(x)
    } else {
        1.0 - erf(x)
    }
}

// erf(x) = (2/√π) e^{-x²} Σ 2^n x^{2n+1} / (2n+1)!!, all terms positive.
fn erf_series(x: f64) -> f64 {
    let tol = ToleranceConfig::default();
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..=tol.max_terms {
        term *= 2.0 * x2 / (2 * n + 1) as f64;
        sum += term;
        if tol.converged(term, sum) {
            break;
        }
    }
    2.0 * FRAC_1_SQRT_PI * (-x2).exp() * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    if x > 27.0 {
        return 0.0;
    }
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..2000 {
        let a = n as f64 * 0.5;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    (-x * x).exp() * FRAC_1_SQRT_PI / f
}

/// `erf(x)/x`, finite at the origin.
pub fn erf_over_x(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        2.0 * FRAC_1_SQRT_PI * (1.0 - x2 / 3.0 + x2 * x2 / 10.0)
    } else {
        erf(x) / x
    }
}
