//! Additive-noise comparison mechanisms.
//!
//! Both mechanisms perturb each parameter independently with sensitivity
//! `Δ = 2r` (the width of the clip interval). The Gaussian mechanism uses the
//! classical calibration `σ = (Δ/ε)·√(2 ln(1.25/δ))`, which is looser than
//! an analytic calibration; it only affects how the baseline compares.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sensitivity: f64,
    pub epsilon: f64,
    /// Only used by the Gaussian mechanism.
    pub delta: Option<f64>,
}

impl NoiseConfig {
    pub fn laplace(sensitivity: f64, epsilon: f64) -> Result<Self> {
        let cfg = Self {
            sensitivity,
            epsilon,
            delta: None,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn gaussian(sensitivity: f64, epsilon: f64, delta: f64) -> Result<Self> {
        let cfg = Self {
            sensitivity,
            epsilon,
            delta: Some(delta),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            return domain(format!(
                "sensitivity must be positive, got {}",
                self.sensitivity
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return domain(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            ));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return domain(format!("delta must lie in (0, 1), got {d}"));
            }
        }
        Ok(())
    }

    /// Classical Gaussian noise scale.
    pub fn gaussian_sigma(&self) -> Result<f64> {
        self.check()?;
        let Some(delta) = self.delta else {
            return domain("the Gaussian mechanism needs delta");
        };
        Ok(self.sensitivity / self.epsilon * (2.0 * (1.25 / delta).ln()).sqrt())
    }

    pub fn laplace_scale(&self) -> Result<f64> {
        self.check()?;
        Ok(self.sensitivity / self.epsilon)
    }
}

pub fn gaussian_mechanism<R: Rng + ?Sized>(
    w: f64,
    config: &NoiseConfig,
    rng: &mut R,
) -> Result<f64> {
    let sigma = config.gaussian_sigma()?;
    let normal = Normal::new(0.0, sigma).map_err(|e| crate::CorbinError::Domain(e.to_string()))?;
    Ok(w + normal.sample(rng))
}

pub fn laplace_mechanism<R: Rng + ?Sized>(
    w: f64,
    config: &NoiseConfig,
    rng: &mut R,
) -> Result<f64> {
    let b = config.laplace_scale()?;
    Ok(w + sample_laplace(b, rng))
}

/// Inverse-CDF Laplace draw with scale `b`.
fn sample_laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    // u in (-1/2, 1/2]; 1 - 2|u| ∈ [0, 1) so reject the log(0) endpoint.
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let t = 1.0 - 2.0 * u.abs();
        if t > 0.0 {
            return -b * u.signum() * t.ln();
        }
    }
}
