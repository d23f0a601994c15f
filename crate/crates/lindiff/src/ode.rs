//! Explicit Runge-Kutta integrators over a sequence of output times.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Method and step control for the numerical integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeSolveConfig {
    /// Classical RK4 with `substeps` equal steps per output interval.
    Rk4 { substeps: usize },
    /// Dormand-Prince 5(4) with error control.
    Rk45 {
        rtol: f64,
        atol: f64,
        max_steps: usize,
    },
}

impl Default for OdeSolveConfig {
    fn default() -> Self {
        OdeSolveConfig::Rk4 { substeps: 64 }
    }
}

impl OdeSolveConfig {
    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        OdeSolveConfig::Rk45 {
            rtol,
            atol,
            max_steps: 10_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OdeSolveConfig::Rk4 { substeps } if substeps == 0 => {
                Err(Error::param("substeps", "must be at least 1"))
            }
            OdeSolveConfig::Rk45 { rtol, atol, max_steps } => {
                if !(rtol > 0.0) || !(atol > 0.0) {
                    Err(Error::param("tolerance", "must be positive"))
                } else if max_steps == 0 {
                    Err(Error::param("max_steps", "must be at least 1"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

pub fn rk4_step<F>(f: &mut F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates `dy/dt = f(t, y)` from `t0` and records the state at every
/// time in `times` (which must be non-decreasing and not below `t0`).
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: &DVector<f64>,
    times: &[f64],
    cfg: &OdeSolveConfig,
) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    cfg.validate()?;
    let mut out = Vec::with_capacity(times.len());
    let mut t = t0;
    let mut y = y0.clone();
    let mut h_guess = None;
    for &target in times {
        if target < t {
            return Err(Error::param("times", "must be non-decreasing and start at or after t0"));
        }
        match *cfg {
            OdeSolveConfig::Rk4 { substeps } => {
                if target > t {
                    let h = (target - t) / substeps as f64;
                    for i in 0..substeps {
                        y = rk4_step(&mut f, t + i as f64 * h, &y, h);
                    }
                }
            }
            OdeSolveConfig::Rk45 { rtol, atol, max_steps } => {
                let (yn, h) = dopri_segment(&mut f, t, &y, target, rtol, atol, max_steps, h_guess)?;
                y = yn;
                h_guess = h;
            }
        }
        t = target;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                at: t,
                reason: "state became non-finite".into(),
            });
        }
        out.push(y.clone());
    }
    Ok(out)
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[allow(clippy::too_many_arguments)]
fn dopri_segment<F>(
    f: &mut F,
    t0: f64,
    y0: &DVector<f64>,
    t1: f64,
    rtol: f64,
    atol: f64,
    max_steps: usize,
    h_guess: Option<f64>,
) -> Result<(DVector<f64>, Option<f64>)>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((y0.clone(), h_guess));
    }
    let mut t = t0;
    let mut y = y0.clone();
    let mut h = h_guess.unwrap_or(span * 1e-3).min(span);
    let h_min = 1e-15 * t1.abs().max(1e-300);
    let mut last_accepted = h;
    for _ in 0..max_steps {
        if t >= t1 {
            return Ok((y, Some(last_accepted)));
        }
        let remaining = t1 - t;
        let step = h.min(remaining);
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    ys.axpy(step * a, kj, 1.0);
                }
            }
            k.push(f(t + C[s] * step, &ys));
        }
        let mut y_new = y.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            let a = A[6][j];
            if a != 0.0 {
                y_new.axpy(step * a, kj, 1.0);
            }
        }
        let mut err_sq = 0.0;
        for i in 0..y.len() {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            e *= step;
            let scale = atol + rtol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / scale).powi(2);
        }
        let err = (err_sq / y.len().max(1) as f64).sqrt();
        if !err.is_finite() {
            h = step * 0.2;
        } else if err <= 1.0 {
            t = if step == remaining { t1 } else { t + step };
            y = y_new;
            if step < remaining {
                last_accepted = step;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
        } else {
            h = step * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
        if h < h_min {
            return Err(Error::Integration {
                at: t,
                reason: format!("step size underflow (h = {h:e})"),
            });
        }
    }
    Err(Error::Integration {
        at: t,
        reason: format!("exceeded {max_steps} steps"),
    })
}
