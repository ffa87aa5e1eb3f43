//! Grid search for the cordon length that minimizes the estimator's error.
//!
//! The objective is continuous in `d` but kinked wherever `d/(s·t)` crosses
//! an integer for a likely speed, so it has many shallow local minima. An
//! exhaustive grid is used instead of any local method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution;
use crate::error::{require_positive, Error, Result};
use crate::speed_model::SpeedDistribution;

pub const DEFAULT_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Vmr,
    Cv,
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vmr" => Ok(Self::Vmr),
            "cv" => Ok(Self::Cv),
            _ => Err(Error::param("objective", format!("expected `vmr` or `cv`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub best_d: f64,
    pub best_objective: f64,
    pub curve: Vec<(f64, f64)>,
    pub objective_kind: ObjectiveKind,
    /// Only meaningful for the CV objective.
    pub m: u64,
    pub t: f64,
}

fn objective(kind: ObjectiveKind, m: u64, d: f64, t: f64, dist: &SpeedDistribution) -> Result<f64> {
    match kind {
        ObjectiveKind::Vmr => distribution::vmr(d, t, dist),
        ObjectiveKind::Cv => distribution::cv(m, d, t, dist),
    }
}

fn evaluate(grid: Vec<f64>, t: f64, dist: &SpeedDistribution, kind: ObjectiveKind, m: u64) -> Result<Vec<(f64, f64)>> {
    require_positive("t", t)?;
    if kind == ObjectiveKind::Cv && m == 0 {
        return Err(Error::param("m", "the CV objective needs m >= 1"));
    }
    grid.into_par_iter().map(|d| objective(kind, m, d, t, dist).map(|v| (d, v))).collect()
}

/// Number of points `start + i·step` with value at most `end`.
fn grid_len(start: f64, end: f64, step: f64) -> usize {
    ((end - start) / step * (1.0 + 1e-12)).floor() as usize + 1
}

/// Objective on the inclusive grid `d_min, d_min + step, …, ≤ d_max`.
pub fn objective_curve(
    d_min: f64,
    d_max: f64,
    step: f64,
    t: f64,
    dist: &SpeedDistribution,
    kind: ObjectiveKind,
    m: u64,
) -> Result<Vec<(f64, f64)>> {
    require_positive("d_min", d_min)?;
    require_positive("step", step)?;
    if !(d_max > d_min) || !d_max.is_finite() {
        return Err(Error::param("d_max", format!("must be finite and exceed d_min = {d_min}")));
    }
    let n = grid_len(d_min, d_max, step);
    let grid = (0..n).map(|i| (d_min + step * i as f64).min(d_max)).collect();
    evaluate(grid, t, dist, kind, m)
}

/// Minimizes the objective over `d = step, 2·step, …, ≤ d_max`. Ties go to
/// the larger `d`, which gives more records per probe.
pub fn optimize_cordon(
    d_max: f64,
    t: f64,
    dist: &SpeedDistribution,
    kind: ObjectiveKind,
    m: u64,
    step: f64,
) -> Result<OptimumReport> {
    require_positive("step", step)?;
    if !(d_max > step) || !d_max.is_finite() {
        return Err(Error::param("d_max", format!("must be finite and exceed step = {step}")));
    }
    let n = grid_len(step, d_max, step);
    let grid = (1..=n).map(|i| (step * i as f64).min(d_max)).collect();
    let curve = evaluate(grid, t, dist, kind, m)?;
    let mut best = curve[0];
    for &(d, v) in &curve[1..] {
        if v <= best.1 {
            best = (d, v);
        }
    }
    Ok(OptimumReport { best_d: best.0, best_objective: best.1, curve, objective_kind: kind, m, t })
}
