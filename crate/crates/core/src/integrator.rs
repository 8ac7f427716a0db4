//! Classical fixed-step fourth-order Runge-Kutta.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ReasonCode, Result};

/// Uniform grid `t_k = k * h`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub step: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Grid covering `[0, horizon]`; the horizon is rounded to a whole number of steps.
    pub fn new(horizon: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::validation(ReasonCode::BadTimeGrid, format!("step must be positive, got {step}")));
        }
        if !(horizon >= step) || !horizon.is_finite() {
            return Err(Error::validation(
                ReasonCode::BadTimeGrid,
                format!("horizon {horizon} must be at least one step ({step})"),
            ));
        }
        Ok(Self {
            step,
            steps: (horizon / step).round() as usize,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.time(k))
    }
}

/// One RK4 step of `y' = f(t, y)`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(y + &k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}
