//! The flat torus `R^n / (tau_1 Z x ... x tau_n Z)`.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat rectangular torus given by its period vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Torus {
    periods: Vec<f64>,
}

impl Torus {
    pub fn new(periods: Vec<f64>) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::InvalidTorus("at least one period is required".into()));
        }
        if let Some((i, p)) = periods
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0))
        {
            return Err(Error::InvalidTorus(format!("period {i} is {p}, must be > 0")));
        }
        Ok(Self { periods })
    }

    /// `[0, period)^dim`.
    pub fn cube(dim: usize, period: f64) -> Result<Self> {
        Self::new(alloc::vec![period; dim])
    }

    pub fn dim(&self) -> usize {
        self.periods.len()
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn volume(&self) -> f64 {
        self.periods.iter().product()
    }

    /// Representative of `x` in `[0, tau)`. The result is never equal to `tau`,
    /// even when `x` sits one ulp below a lattice point.
    #[inline]
    pub fn wrap_coord(x: f64, tau: f64) -> f64 {
        if x >= 0.0 && x < tau {
            return x;
        }
        let mut r = x - tau * libm::floor(x / tau);
        if r >= tau {
            r -= tau;
        }
        if r < 0.0 {
            r += tau;
        }
        if r >= 0.0 && r < tau {
            r
        } else if r.is_nan() {
            r
        } else {
            0.0
        }
    }

    #[inline]
    pub fn wrap_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for ((o, &xi), &tau) in out.iter_mut().zip(x).zip(&self.periods) {
            *o = Self::wrap_coord(xi, tau);
        }
    }

    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim()];
        self.wrap_into(x, &mut out);
        out
    }

    /// Minimal-image displacement `x - y - k` over lattice shifts `k`.
    pub fn minimal_image(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let tau = self.periods[i];
            let d = x[i] - y[i];
            *o = d - tau * libm::round(d / tau);
        }
    }

    pub fn periodic_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let tau = self.periods[i];
            let d = x[i] - y[i];
            let d = d - tau * libm::round(d / tau);
            acc += d * d;
        }
        libm::sqrt(acc)
    }

    /// Number of grid nodes per axis when the cell is cut with spacing `step`.
    /// Fails unless `step` divides every period.
    pub fn grid_shape(&self, step: f64) -> Result<Vec<usize>> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidConfig(format!("grid step {step} must be > 0")));
        }
        self.periods
            .iter()
            .map(|&tau| {
                let n = libm::round(tau / step);
                if n < 1.0 || libm::fabs(n * step - tau) > 1e-9 * tau {
                    Err(Error::InvalidConfig(format!(
                        "grid step {step} does not divide period {tau}"
                    )))
                } else {
                    Ok(n as usize)
                }
            })
            .collect()
    }
}

impl TryFrom<Vec<f64>> for Torus {
    type Error = Error;
    fn try_from(periods: Vec<f64>) -> Result<Self> {
        Torus::new(periods)
    }
}

impl From<Torus> for Vec<f64> {
    fn from(t: Torus) -> Vec<f64> {
        t.periods
    }
}

/// Iterates over multi-indices of a row-major grid (last axis fastest).
pub fn unravel(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for axis in (0..shape.len()).rev() {
        out[axis] = flat % shape[axis];
        flat /= shape[axis];
    }
}

pub fn ravel(index: &[usize], shape: &[usize]) -> usize {
    index
        .iter()
        .zip(shape)
        .fold(0, |acc, (&i, &n)| acc * n + i)
}
