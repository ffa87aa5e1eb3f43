//! Monte Carlo checks of the estimator under uniform linear motion.
//!
//! Each probe crosses the cordon at a constant speed drawn from `g`, with its
//! recording clock at a uniform random phase. Every (trial, site) pair gets
//! its own ChaCha8 stream keyed by a hash of the master seed and both
//! indices, so results do not depend on how trials are scheduled on threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_through_origin, mape, CalibrationPair, Method};
use crate::distribution::{self, VolumePdf};
use crate::error::{require_positive, Error, Result};
use crate::estimator::{compensated_sum, volume_from_speeds};
use crate::footprint::FootprintRecord;
use crate::speed_model::{preset_or_inline, SpeedDistribution};

/// Histogram bin width for simulated m̂.
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.02;

const TABLE2_SITES: &str = include_str!("../data/table2_sites.json");

/// Records left by a probe at speed `s` whose first record falls
/// `s·entry_offset` past the cordon entry; the cordon is `[0, d)`.
pub fn simulate_pass(s: f64, d: f64, t: f64, entry_offset: f64) -> Result<u64> {
    require_positive("s", s)?;
    require_positive("d", d)?;
    require_positive("t", t)?;
    if !(entry_offset >= 0.0 && entry_offset < t) {
        return Err(Error::param("entry_offset", format!("must lie in [0, {t}), got {entry_offset}")));
    }
    Ok(pass_count(s, d, t, entry_offset))
}

fn record_position(s: f64, t: f64, offset: f64, k: u64) -> f64 {
    s * offset + k as f64 * (s * t)
}

/// Number of `k ≥ 0` with `record_position(k) < d`, evaluated in floating
/// point exactly as the positions themselves are.
fn pass_count(s: f64, d: f64, t: f64, offset: f64) -> u64 {
    if record_position(s, t, offset, 0) >= d {
        return 0;
    }
    let mut n = ((d - s * offset) / (s * t)).ceil().max(1.0) as u64;
    while n > 1 && record_position(s, t, offset, n - 1) >= d {
        n -= 1;
    }
    while record_position(s, t, offset, n) < d {
        n += 1;
    }
    n
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, trial: u64, site: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ trial) ^ site))
}

#[derive(Debug, Clone, Copy)]
struct Pass {
    speed: f64,
    offset: f64,
    count: u64,
}

fn draw_passes(rng: &mut ChaCha8Rng, m: u64, d: f64, t: f64, dist: &SpeedDistribution) -> Vec<Pass> {
    (0..m)
        .map(|_| {
            let speed = dist.sample_one(rng);
            let offset = rng.gen::<f64>() * t;
            // The product can round up to t for some t.
            let offset = if offset < t { offset } else { 0.0 };
            Pass { speed, offset, count: pass_count(speed, d, t, offset) }
        })
        .collect()
}

fn passes_m_hat(passes: &[Pass], d: f64, t: f64) -> f64 {
    let speeds: Vec<f64> =
        passes.iter().flat_map(|p| std::iter::repeat_n(p.speed, p.count as usize)).collect();
    volume_from_speeds(&speeds, d, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub d: f64,
    pub t: f64,
    pub m: u64,
    #[serde(deserialize_with = "preset_or_inline")]
    pub dist: SpeedDistribution,
    pub trials: u64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// `s1`: d = 300, t = 4; `s2`: d = 40, t = 1; both with the Park mixture.
    pub fn preset(name: &str, m: u64, trials: u64, seed: u64) -> Result<Self> {
        let (d, t) = match name {
            "s1" => (300.0, 4.0),
            "s2" => (40.0, 1.0),
            _ => return Err(Error::UnknownPreset(name.to_string())),
        };
        Ok(Self { d, t, m, dist: SpeedDistribution::park_i35(), trials, seed })
    }

    fn validate(&self) -> Result<()> {
        require_positive("d", self.d)?;
        require_positive("t", self.t)?;
        if self.trials == 0 {
            return Err(Error::param("trials", "need at least one trial"));
        }
        Ok(())
    }

    fn passes(&self, trial: u64) -> Vec<Pass> {
        draw_passes(&mut stream(self.seed, trial, 0), self.m, self.d, self.t, &self.dist)
    }

    /// m̂ for one trial.
    pub fn trial_estimate(&self, trial: u64) -> f64 {
        passes_m_hat(&self.passes(trial), self.d, self.t)
    }

    /// The records of one trial for a cordon `(0, d]`, with probes moving
    /// toward decreasing positions. Cropping them to that cordon and
    /// estimating gives back [`trial_estimate`](Self::trial_estimate) exactly.
    pub fn trial_footprints(&self, trial: u64) -> Vec<FootprintRecord> {
        let mut out = Vec::new();
        for (i, p) in self.passes(trial).iter().enumerate() {
            for k in 0..p.count {
                let travelled = record_position(p.speed, self.t, p.offset, k);
                out.push(FootprintRecord::new(self.d - travelled, p.speed).with_label(format!("probe-{i}")));
            }
        }
        out
    }
}

/// Counts of samples in bins `[origin + j·width, origin + (j+1)·width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub origin: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins non-negative samples from 0 upward.
    pub fn from_samples(samples: &[f64], width: f64) -> Result<Self> {
        require_positive("width", width)?;
        let mut counts: Vec<u64> = Vec::new();
        for &x in samples {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::param("samples", format!("must be finite and >= 0, got {x}")));
            }
            let j = (x / width).floor() as usize;
            if j >= counts.len() {
                counts.resize(j + 1, 0);
            }
            counts[j] += 1;
        }
        Ok(Self { origin: 0.0, width, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Total variation distance to the binned theoretical law.
    pub fn total_variation(&self, pdf: &VolumePdf) -> f64 {
        let reach = pdf.node(pdf.densities.len()) + pdf.grid_step;
        let bins = self.counts.len().max(((reach - self.origin) / self.width).ceil() as usize + 1);
        let theory = pdf.bin_masses(self.origin, self.width, bins);
        let n = self.total() as f64;
        let diff: f64 = theory
            .iter()
            .enumerate()
            .map(|(j, &p)| (p - self.counts.get(j).copied().unwrap_or(0) as f64 / n).abs())
            .sum();
        0.5 * diff
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub cv: f64,
    pub histogram: Histogram,
}

impl SimSummary {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("samples", "need at least one sample"));
        }
        let n = samples.len() as f64;
        let mean = compensated_sum(samples.iter().copied()) / n;
        let variance = if samples.len() > 1 {
            compensated_sum(samples.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0)
        } else {
            0.0
        };
        let cv = if mean > 0.0 { variance.sqrt() / mean } else { 0.0 };
        Ok(Self { mean, variance, cv, histogram: Histogram::from_samples(samples, HISTOGRAM_BIN_WIDTH)? })
    }
}

/// Runs every trial of a scenario; samples are in trial order.
pub fn run_scenario(config: &ScenarioConfig) -> Result<(Vec<f64>, SimSummary)> {
    config.validate()?;
    let samples: Vec<f64> = (0..config.trials).into_par_iter().map(|i| config.trial_estimate(i)).collect();
    let summary = SimSummary::from_samples(&samples)?;
    Ok((samples, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site_id: String,
    /// Average daily traffic, vehicles/day.
    pub adt: f64,
    /// Probes crossing during the observation window.
    pub m: u64,
    pub d: f64,
    #[serde(deserialize_with = "preset_or_inline")]
    pub dist: SpeedDistribution,
    pub t: f64,
    /// Published VMR for the site, when known; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_vmr: Option<f64>,
}

impl SiteConfig {
    fn validate(&self) -> Result<()> {
        if !(self.adt.is_finite() && self.adt > 0.0) {
            return Err(Error::param("adt", format!("site {}: must be > 0, got {}", self.site_id, self.adt)));
        }
        if self.m == 0 {
            return Err(Error::param("m", format!("site {}: need at least one probe", self.site_id)));
        }
        require_positive("d", self.d)?;
        require_positive("t", self.t)
    }
}

/// The 34 low-volume sites: two speed populations, 2 % penetration over
/// seven days, t = 1 s.
pub fn table2_sites() -> Vec<SiteConfig> {
    serde_json::from_str(TABLE2_SITES).expect("bundled site table is valid")
}

pub fn load_sites(spec: &str) -> Result<Vec<SiteConfig>> {
    if spec == "table2" {
        return Ok(table2_sites());
    }
    let text = std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub ols_mape: f64,
    pub wls_mape: f64,
    /// Known-site pairs where both m̂ were 0, so no model could be fitted.
    pub skipped_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub sites: usize,
    pub pairs_per_trial: usize,
    pub trials: Vec<TrialOutcome>,
    pub mean_ols_mape: f64,
    pub mean_wls_mape: f64,
    /// Fraction of trials with WLS average MAPE strictly below OLS.
    pub wls_better_fraction: f64,
}

/// Per trial: simulate m̂ at every site, then for every pair of "known"
/// sites fit OLS and 1/VMR-weighted WLS through the origin, predict the
/// remaining sites and average the MAPEs over pairs.
pub fn run_regression_experiment(sites: &[SiteConfig], trials: u64, seed: u64) -> Result<ExperimentReport> {
    if sites.len() < 3 {
        return Err(Error::param("sites", format!("need at least 3 sites, got {}", sites.len())));
    }
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    for s in sites {
        s.validate()?;
    }
    let weights = sites
        .iter()
        .map(|s| {
            let v = distribution::vmr(s.d, s.t, &s.dist)?;
            if v > 0.0 {
                Ok(1.0 / v)
            } else {
                Err(Error::param("sites", format!("site {} has zero VMR; 1/VMR weighting is undefined", s.site_id)))
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let m_hats: Vec<f64> = sites
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    let passes = draw_passes(&mut stream(seed, trial, j as u64), s.m, s.d, s.t, &s.dist);
                    passes_m_hat(&passes, s.d, s.t)
                })
                .collect();
            score_trial(sites, &weights, &m_hats)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = outcomes.len() as f64;
    let pairs_per_trial = sites.len() * (sites.len() - 1) / 2;
    Ok(ExperimentReport {
        sites: sites.len(),
        pairs_per_trial,
        mean_ols_mape: compensated_sum(outcomes.iter().map(|o| o.ols_mape)) / n,
        mean_wls_mape: compensated_sum(outcomes.iter().map(|o| o.wls_mape)) / n,
        wls_better_fraction: outcomes.iter().filter(|o| o.wls_mape < o.ols_mape).count() as f64 / n,
        trials: outcomes,
    })
}

fn score_trial(sites: &[SiteConfig], weights: &[f64], m_hats: &[f64]) -> Result<TrialOutcome> {
    let n = sites.len();
    let mut ols = Vec::new();
    let mut wls = Vec::new();
    let mut skipped = 0;
    let mut pred = Vec::with_capacity(n - 2);
    let mut truth = Vec::with_capacity(n - 2);
    for a in 0..n {
        for b in a + 1..n {
            let known = [a, b].map(|j| CalibrationPair::weighted(m_hats[j], sites[j].adt, weights[j]));
            let (o, w) = match (fit_through_origin(&known, Method::Ols), fit_through_origin(&known, Method::Wls)) {
                (Ok(o), Ok(w)) => (o, w),
                (Err(Error::NoFit(_)), _) | (_, Err(Error::NoFit(_))) => {
                    skipped += 1;
                    continue;
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            for (model, out) in [(o, &mut ols), (w, &mut wls)] {
                pred.clear();
                truth.clear();
                for j in (0..n).filter(|&j| j != a && j != b) {
                    pred.push(model.predict(m_hats[j]));
                    truth.push(sites[j].adt);
                }
                out.push(mape(&pred, &truth)?);
            }
        }
    }
    if ols.is_empty() {
        return Err(Error::NoFit("no known-site pair had a non-zero probe volume".into()));
    }
    Ok(TrialOutcome {
        ols_mape: compensated_sum(ols.iter().copied()) / ols.len() as f64,
        wls_mape: compensated_sum(wls.iter().copied()) / wls.len() as f64,
        skipped_pairs: skipped,
    })
}
