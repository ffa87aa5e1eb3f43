//! The probe-volume estimator and the per-speed record split.

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Result};
use crate::footprint::CordonSample;

/// Ratios `d/(s·t)` this close to an integer are snapped onto it.
pub const INTEGER_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub m_hat: f64,
    pub n: usize,
    pub d: f64,
    pub t: f64,
}

/// Splits `d/(s·t)` into its guaranteed integer part and the probability of
/// one extra record, snapping near-integers so the split cannot flip by an ulp.
pub(crate) fn record_split(s: f64, d: f64, t: f64) -> (u64, f64) {
    let x = d / (s * t);
    let nearest = x.round();
    if (x - nearest).abs() <= INTEGER_SNAP * x.max(1.0) {
        (nearest as u64, 0.0)
    } else {
        let floor = x.floor();
        (floor as u64, x - floor)
    }
}

fn check_sdt(s: f64, d: f64, t: f64) -> Result<()> {
    require_positive("s", s)?;
    require_positive("d", d)?;
    require_positive("t", t)
}

/// Minimum number of records a probe at speed `s` leaves in a cordon of
/// length `d` when recording every `t` seconds: ⌊d/(s·t)⌋.
pub fn min_records(s: f64, d: f64, t: f64) -> Result<u64> {
    check_sdt(s, d, t)?;
    Ok(record_split(s, d, t).0)
}

/// Probability of one additional record: the fractional part of d/(s·t).
pub fn extra_record_prob(s: f64, d: f64, t: f64) -> Result<f64> {
    check_sdt(s, d, t)?;
    Ok(record_split(s, d, t).1)
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// m̂ = (t/d)·Σ s_a over the records in the cordon.
pub fn volume_from_speeds(speeds: &[f64], d: f64, t: f64) -> f64 {
    if speeds.is_empty() {
        return 0.0;
    }
    (t / d) * compensated_sum(speeds.iter().copied())
}

pub fn estimate_probe_volume(sample: &CordonSample) -> VolumeEstimate {
    VolumeEstimate {
        m_hat: volume_from_speeds(sample.speeds(), sample.d(), sample.t()),
        n: sample.speeds().len(),
        d: sample.d(),
        t: sample.t(),
    }
}
