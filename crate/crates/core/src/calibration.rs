//! Through-origin calibration of traffic volume against probe volume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::compensated_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub m_hat: f64,
    pub known_volume: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl CalibrationPair {
    pub fn new(m_hat: f64, known_volume: f64) -> Self {
        Self { m_hat, known_volume, weight: 1.0 }
    }

    pub fn weighted(m_hat: f64, known_volume: f64, weight: f64) -> Self {
        Self { m_hat, known_volume, weight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Unit weights.
    Ols,
    /// The pair weights, typically 1/VMR.
    Wls,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(Self::Ols),
            "wls" => Ok(Self::Wls),
            _ => Err(Error::param("method", format!("expected `ols` or `wls`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub beta: f64,
    pub method: Method,
    /// Pairs with m̂ = 0: kept in the fit, where they contribute nothing.
    pub zero_pairs: usize,
}

impl CalibrationModel {
    pub fn predict(&self, m_hat: f64) -> f64 {
        predict(self, m_hat)
    }
}

/// Fits `volume = beta·m̂` by (weighted) least squares:
/// beta = Σ w·x·y / Σ w·x².
pub fn fit_through_origin(pairs: &[CalibrationPair], method: Method) -> Result<CalibrationModel> {
    for (i, p) in pairs.iter().enumerate() {
        if !(p.m_hat.is_finite() && p.m_hat >= 0.0) {
            return Err(Error::param("m_hat", format!("pair {i}: must be finite and >= 0, got {}", p.m_hat)));
        }
        if !(p.known_volume.is_finite() && p.known_volume > 0.0) {
            return Err(Error::param("known_volume", format!("pair {i}: must be > 0, got {}", p.known_volume)));
        }
        if method == Method::Wls && !(p.weight.is_finite() && p.weight > 0.0) {
            return Err(Error::param("weight", format!("pair {i}: must be finite and > 0, got {}", p.weight)));
        }
    }
    // Scaling by the largest weight makes equal weights exactly 1, so WLS
    // with uniform weights reproduces OLS bit for bit.
    let top = pairs.iter().map(|p| p.weight).fold(0.0, f64::max);
    let w = |p: &CalibrationPair| match method {
        Method::Ols => 1.0,
        Method::Wls => p.weight / top,
    };
    let sxx = compensated_sum(pairs.iter().map(|p| w(p) * p.m_hat * p.m_hat));
    if !(sxx > 0.0) {
        return Err(Error::NoFit("every pair has m_hat = 0".into()));
    }
    let sxy = compensated_sum(pairs.iter().map(|p| w(p) * p.m_hat * p.known_volume));
    let zero_pairs = pairs.iter().filter(|p| p.m_hat == 0.0).count();
    Ok(CalibrationModel { beta: sxy / sxx, method, zero_pairs })
}

pub fn predict(model: &CalibrationModel, m_hat: f64) -> f64 {
    model.beta * m_hat
}

/// Mean absolute percentage error, as a fraction.
pub fn mape(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::param(
            "truth",
            format!("need equal non-empty lists, got {} and {}", predicted.len(), truth.len()),
        ));
    }
    if let Some(bad) = truth.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::param("truth", format!("values must be > 0, got {bad}")));
    }
    let total = compensated_sum(predicted.iter().zip(truth).map(|(p, t)| (p - t).abs() / t));
    Ok(total / truth.len() as f64)
}
