//! Gaussian-mechanism noise calibration.
//!
//! The noise scale follows the standard Gaussian mechanism bound
//! `sigma >= c * sensitivity / epsilon` with `c = sqrt(2 ln(1.25 / delta))`,
//! evaluated at the boundary (smallest admissible scale). The formal guarantee
//! is proved for `epsilon` in (0, 1); the calibrator accepts any positive
//! `epsilon` since practical configurations commonly use larger budgets.

use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian, ModelVector, RngStream};

/// A client's DP parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    /// L2 sensitivity of the released update.
    pub sensitivity: f64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64, sensitivity: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
            return Err(Error::Parameter(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        if !sensitivity.is_finite() || sensitivity <= 0.0 {
            return Err(Error::Parameter(format!(
                "sensitivity must be positive, got {sensitivity}"
            )));
        }
        Ok(PrivacySpec {
            epsilon,
            delta,
            sensitivity,
        })
    }
}

/// Standard deviation of the per-dimension Gaussian noise, with its square
/// stored alongside so downstream variance algebra uses the exact value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScale {
    pub sigma: f64,
    pub sigma_sq: f64,
}

impl NoiseScale {
    pub fn from_sigma(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Parameter(format!(
                "sigma must be nonnegative, got {sigma}"
            )));
        }
        Ok(NoiseScale {
            sigma,
            sigma_sq: sigma * sigma,
        })
    }

    pub fn from_variance(sigma_sq: f64) -> Result<Self> {
        if !sigma_sq.is_finite() || sigma_sq < 0.0 {
            return Err(Error::Parameter(format!(
                "variance must be nonnegative, got {sigma_sq}"
            )));
        }
        Ok(NoiseScale {
            sigma: sigma_sq.sqrt(),
            sigma_sq,
        })
    }
}

/// Calibration constant `c = sqrt(2 ln(1.25 / delta))`.
pub fn compute_c(delta: f64) -> Result<f64> {
    if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
        return Err(Error::Parameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt())
}

/// Minimal admissible noise scale `sigma = c * sensitivity / epsilon`.
pub fn compute_sigma(spec: &PrivacySpec) -> Result<NoiseScale> {
    let c = compute_c(spec.delta)?;
    NoiseScale::from_sigma(c * spec.sensitivity / spec.epsilon)
}

/// One draw of per-dimension i.i.d. N(0, sigma^2) noise.
pub fn generate_dp_noise(scale: &NoiseScale, dim: usize, rng: &mut RngStream) -> Result<ModelVector> {
    sample_gaussian(dim, 0.0, scale.sigma_sq, rng)
}
