//! Central finite-difference gradient checks.

use crate::error::{Error, Result};
use crate::vecmath::ParamVector;

/// Step used by the default checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Pass threshold on [`GradCheck::max_rel_error`].
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
    pub max_rel_error: f64,
    /// Coordinate at which the maximum occurred.
    pub worst_index: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `(f(θ + h eᵢ) − f(θ − h eᵢ)) / 2h` for every coordinate.
pub fn central_differences<F>(mut loss: F, theta: &ParamVector, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let mut work = theta.as_slice().to_vec();
    let mut out = Vec::with_capacity(work.len());
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = loss(&ParamVector::checked("theta", work.clone())?)?;
        work[i] = orig - h;
        let minus = loss(&ParamVector::checked("theta", work.clone())?)?;
        work[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Compares an analytic gradient with central differences of `loss`.
pub fn check_gradient<F>(loss: F, theta: &ParamVector, analytic: &ParamVector, h: f64) -> Result<GradCheck>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    Error::check_dims(theta.len(), analytic.len())?;
    let numeric = central_differences(loss, theta, h)?;
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(1.0);
        if rel > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: rel,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}
