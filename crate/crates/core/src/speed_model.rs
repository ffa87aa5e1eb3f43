//! Probe speed population as a finite mixture of truncated normals.
//!
//! Each component is truncated individually to the common support
//! `(lower, upper]` and the mixture density is the weighted sum of the
//! truncated component densities.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::quadrature::{gl32, GaussLegendre};

/// Weight sums within this distance of 1 are renormalized; anything further
/// off is rejected. Published mixtures are often rounded to three decimals.
pub const WEIGHT_SUM_TOLERANCE: f64 = 5e-3;

/// Quadrature skips standardized points where a component's density is below
/// `exp(-Z_WINDOW²/2)` times its value at the truncated mode.
const Z_WINDOW: f64 = 12.0;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Φ⁻¹(p) for p in (0, 1).
fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Probability mass of the standard normal on `[a, b]`, accurate in both tails.
fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedComponent {
    /// Untruncated mean (m/s).
    pub mean: f64,
    /// Untruncated standard deviation (m/s).
    pub sd: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawDistribution {
    components: Vec<SpeedComponent>,
    lower: f64,
    upper: f64,
}

/// Per-component quantities derived once at construction.
#[derive(Debug, Clone, Copy)]
struct Truncation {
    /// Standardized lower and upper bounds.
    a: f64,
    b: f64,
    /// Φ(b) − Φ(a).
    norm: f64,
}

/// The probe speed density `g(s)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct SpeedDistribution {
    components: Vec<SpeedComponent>,
    lower: f64,
    upper: f64,
    truncations: Vec<Truncation>,
    cumulative_weights: Vec<f64>,
}

impl TryFrom<RawDistribution> for SpeedDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        SpeedDistribution::new(raw.components, raw.lower, raw.upper)
    }
}

impl From<SpeedDistribution> for RawDistribution {
    fn from(d: SpeedDistribution) -> Self {
        RawDistribution { components: d.components, lower: d.lower, upper: d.upper }
    }
}

impl PartialEq for SpeedDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components && self.lower == other.lower && self.upper == other.upper
    }
}

/// Deserializes a distribution given either as a preset name or inline.
pub fn preset_or_inline<'de, D>(de: D) -> std::result::Result<SpeedDistribution, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Source {
        Name(String),
        Inline(SpeedDistribution),
    }
    match Source::deserialize(de)? {
        Source::Name(name) => SpeedDistribution::preset(&name).map_err(serde::de::Error::custom),
        Source::Inline(dist) => Ok(dist),
    }
}

/// Names accepted by [`SpeedDistribution::preset`].
pub const PRESET_NAMES: [&str; 3] = ["park-i35", "table2-60mph", "table2-30mph"];

impl SpeedDistribution {
    pub fn new(components: Vec<SpeedComponent>, lower: f64, upper: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidDistribution("at least one component is required".into()));
        }
        if !(lower.is_finite() && upper.is_finite() && lower >= 0.0 && lower < upper) {
            return Err(Error::InvalidDistribution(format!(
                "support bounds must satisfy 0 <= lower < upper, got ({lower}, {upper}]"
            )));
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.mean.is_finite() && c.sd.is_finite() && c.sd > 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "component {i}: mean must be finite and sd > 0 (mean {}, sd {})",
                    c.mean, c.sd
                )));
            }
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(Error::InvalidDistribution(format!(
                    "component {i}: weight {} outside [0, 1]",
                    c.weight
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}, expected 1")));
        }
        // Already-normalized weights are kept as given so that serialization
        // round-trips exactly.
        let components: Vec<SpeedComponent> = if (total - 1.0).abs() <= 4.0 * f64::EPSILON {
            components
        } else {
            components.into_iter().map(|c| SpeedComponent { weight: c.weight / total, ..c }).collect()
        };

        let mut truncations = Vec::with_capacity(components.len());
        for (i, c) in components.iter().enumerate() {
            let a = (lower - c.mean) / c.sd;
            let b = (upper - c.mean) / c.sd;
            let norm = std_normal_mass(a, b);
            if !(norm > 0.0) && c.weight > 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "component {i} has no probability mass inside ({lower}, {upper}]"
                )));
            }
            truncations.push(Truncation { a, b, norm });
        }
        let mut acc = 0.0;
        let cumulative_weights = components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();

        Ok(Self { components, lower, upper, truncations, cumulative_weights })
    }

    /// A single truncated normal.
    pub fn single(mean: f64, sd: f64, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![SpeedComponent { mean, sd, weight: 1.0 }], lower, upper)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "park-i35" => include_str!("../data/presets/park-i35.json"),
            "table2-60mph" => include_str!("../data/presets/table2-60mph.json"),
            "table2-30mph" => include_str!("../data/presets/table2-30mph.json"),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(serde_json::from_str(text)?)
    }

    /// The four-component I-35 mixture truncated to (0, 40].
    pub fn park_i35() -> Self {
        Self::preset("park-i35").expect("bundled preset is valid")
    }

    /// Resolves a preset name, falling back to reading a JSON file.
    pub fn from_preset_or_path(spec: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&spec) {
            return Self::preset(spec);
        }
        Self::from_json_file(spec)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn components(&self) -> &[SpeedComponent] {
        &self.components
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Mixture density at `s`; zero outside `(lower, upper]`.
    pub fn pdf(&self, s: f64) -> f64 {
        if !(s > self.lower && s <= self.upper) {
            return 0.0;
        }
        self.components
            .iter()
            .zip(&self.truncations)
            .filter(|(c, _)| c.weight > 0.0)
            .map(|(c, tr)| c.weight * std_normal_pdf((s - c.mean) / c.sd) / (c.sd * tr.norm))
            .sum()
    }

    /// Mixture CDF.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= self.lower {
            return 0.0;
        }
        if s >= self.upper {
            return 1.0;
        }
        let v: f64 = self
            .components
            .iter()
            .zip(&self.truncations)
            .filter(|(c, _)| c.weight > 0.0)
            .map(|(c, tr)| c.weight * std_normal_mass(tr.a, (s - c.mean) / c.sd) / tr.norm)
            .sum();
        v.clamp(0.0, 1.0)
    }

    /// Probability mass on `(a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let (a, b) = (a.max(self.lower), b.min(self.upper));
        if b <= a {
            return 0.0;
        }
        self.components
            .iter()
            .zip(&self.truncations)
            .filter(|(c, _)| c.weight > 0.0)
            .map(|(c, tr)| c.weight * std_normal_mass((a - c.mean) / c.sd, (b - c.mean) / c.sd) / tr.norm)
            .sum::<f64>()
            .max(0.0)
    }

    /// Draws `count` i.i.d. speeds from a ChaCha8 stream seeded by `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample_one(&mut rng)).collect()
    }

    /// One draw: pick a component by weight, then invert its truncated CDF.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let pick: f64 = rng.gen();
        let j = self
            .cumulative_weights
            .iter()
            .position(|&c| pick < c)
            .unwrap_or_else(|| self.components.iter().rposition(|c| c.weight > 0.0).unwrap_or(0));
        let u: f64 = rng.gen();
        self.truncated_quantile(j, u)
    }

    fn truncated_quantile(&self, j: usize, u: f64) -> f64 {
        let c = &self.components[j];
        let tr = &self.truncations[j];
        let z = if tr.a > 0.0 {
            // Upper tail: invert the survival function to keep precision.
            let qa = std_normal_sf(tr.a);
            let qb = std_normal_sf(tr.b);
            -std_normal_quantile(qa - u * (qa - qb))
        } else {
            let pa = std_normal_cdf(tr.a);
            let pb = std_normal_cdf(tr.b);
            std_normal_quantile(pa + u * (pb - pa))
        };
        let z = if z.is_finite() { z.clamp(tr.a, tr.b) } else if z > 0.0 { tr.b } else { tr.a };
        let x = (c.mean + c.sd * z).min(self.upper);
        if x <= self.lower {
            self.lower.next_up()
        } else {
            x
        }
    }

    /// ∫ weight(s) g(s) ds over the support, split at `breakpoints`.
    ///
    /// Each piece between consecutive breakpoints (clipped to the support) is
    /// integrated per component in standardized coordinates with the 32-point
    /// Gauss–Legendre rule, so the weight only needs to be smooth within a
    /// piece.
    pub fn integrate_weighted<F>(&self, weight: F, breakpoints: &[f64]) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        if breakpoints.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::param("breakpoints", "must be sorted ascending and free of NaN"));
        }
        let mut edges = Vec::with_capacity(breakpoints.len() + 2);
        edges.push(self.lower);
        edges.extend(breakpoints.iter().copied().filter(|&b| b > self.lower && b < self.upper));
        edges.push(self.upper);
        edges.dedup();

        let mut total = 0.0;
        for piece in edges.windows(2) {
            total += self.integrate_interval(piece[0], piece[1], gl32(), &weight)?;
        }
        Ok(total)
    }

    /// ∫_a^b weight(s) g(s) ds for an interval on which `weight` is smooth.
    pub(crate) fn integrate_interval<F>(&self, a: f64, b: f64, rule: &GaussLegendre, weight: &F) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        let a = a.max(self.lower);
        let b = b.min(self.upper);
        if !(b > a) {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (c, tr) in self.components.iter().zip(&self.truncations) {
            if c.weight == 0.0 {
                continue;
            }
            // Mode of the truncated component, in standardized units.
            let mode = 0.0f64.clamp(tr.a, tr.b);
            let reach = (mode * mode + Z_WINDOW * Z_WINDOW).sqrt();
            let lo = ((a - c.mean) / c.sd).max(-reach).max(tr.a);
            let hi = ((b - c.mean) / c.sd).min(reach).min(tr.b);
            if !(hi > lo) {
                continue;
            }
            // Narrower sub-pieces where the density decays fast (far tails).
            let span = 2.0 / mode.abs().max(1.0);
            let pieces = ((hi - lo) / span).ceil().max(1.0) as usize;
            let width = (hi - lo) / pieces as f64;
            let mut part = 0.0;
            for k in 0..pieces {
                let za = lo + width * k as f64;
                let zb = if k + 1 == pieces { hi } else { za + width };
                part += rule.try_integrate(za, zb, |z| {
                    let s = c.mean + c.sd * z;
                    let w = weight(s);
                    if w.is_finite() {
                        Ok(w * std_normal_pdf(z))
                    } else {
                        Err(Error::NonFiniteIntegrand { at: s, value: w })
                    }
                })?;
            }
            total += c.weight * part / tr.norm;
        }
        Ok(total)
    }
}
