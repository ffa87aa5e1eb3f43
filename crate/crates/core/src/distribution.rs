//! Exact distribution of the probe-volume estimator.
//!
//! For a single probe at speed `s` the record count is `ñ + K` with
//! `K ~ Bernoulli(p)`, so m̂ = s·t·(ñ + K)/d. Pushing `g(s)` through that map
//! band by band (one band per value of ñ) gives the single-probe density;
//! `m` independent probes give its m-fold self-convolution.
//!
//! Densities live on a uniform lattice anchored at zero. Grid value `i`
//! stores the average density over the cell `[(i - ½)h, (i + ½)h)`, and the
//! lattice measure puts mass `h·densities[i]` at `i·h`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::estimator::record_split;
use crate::quadrature::{gl32, gl8};
use crate::speed_model::SpeedDistribution;

pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Fewest grid points allowed across the support of m̂.
pub const MIN_GRID_POINTS: usize = 100;

/// Tolerance on total mass for a density to count as normalized.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Per-fold renormalization drift that triggers a warning.
pub const FOLD_DRIFT_WARNING: f64 = 1e-4;

/// Folds above this use the FFT path under [`ConvolutionMethod::Auto`].
pub const DIRECT_FOLD_LIMIT: u32 = 64;

/// Bound on the variance contribution ignored below the last speed breakpoint.
const VARIANCE_TAIL_BOUND: f64 = 1e-13;
const MAX_BREAKPOINTS: usize = 2_000_000;

/// Bands carrying less g-mass than this are deposited at m̂ = 1 unresolved.
const NEGLIGIBLE_BAND_MASS: f64 = 1e-12;
/// Once the g-mass below the current band drops under this, it is all
/// deposited at m̂ = 1.
const NEGLIGIBLE_TAIL_MASS: f64 = 1e-10;

fn check_dt(d: f64, t: f64) -> Result<()> {
    require_positive("d", d)?;
    require_positive("t", t)
}

/// b(s, d, t) = s²·p·(1 − p): the speed-conditional variance kernel.
pub fn bernoulli_var_term(s: f64, d: f64, t: f64) -> Result<f64> {
    require_positive("s", s)?;
    check_dt(d, t)?;
    Ok(var_kernel(s, d, t))
}

fn var_kernel(s: f64, d: f64, t: f64) -> f64 {
    let (_, p) = record_split(s, d, t);
    s * s * p * (1.0 - p)
}

/// Speeds `d/(t·j)` inside the support, ascending. These are the kinks of
/// `b(·, d, t)`. The list stops once the variance that could hide below the
/// smallest breakpoint (b ≤ s²/4 there) is under a fixed absolute bound.
pub fn variance_breakpoints(d: f64, t: f64, dist: &SpeedDistribution) -> Vec<f64> {
    let scale = (t / d) * (t / d);
    let first = ((d / (t * dist.upper())).floor() as usize).max(1);
    let mut out = Vec::new();
    for j in first.. {
        let s = d / (t * j as f64);
        if s >= dist.upper() {
            continue;
        }
        if s <= dist.lower() || out.len() >= MAX_BREAKPOINTS {
            break;
        }
        out.push(s);
        if scale * s * s * 0.25 * dist.cdf(s) < VARIANCE_TAIL_BOUND {
            break;
        }
    }
    out.reverse();
    out
}

/// VMR[m̂] = (t²/d²)·∫ b(s,d,t) g(s) ds. Independent of m.
pub fn vmr(d: f64, t: f64, dist: &SpeedDistribution) -> Result<f64> {
    check_dt(d, t)?;
    let breakpoints = variance_breakpoints(d, t, dist);
    let integral = dist.integrate_weighted(|s| var_kernel(s, d, t), &breakpoints)?;
    Ok((t / d) * (t / d) * integral)
}

/// Var[m̂] for `m` probes: m·VMR.
pub fn variance(m: u64, d: f64, t: f64, dist: &SpeedDistribution) -> Result<f64> {
    check_dt(d, t)?;
    if m == 0 {
        return Ok(0.0);
    }
    Ok(m as f64 * vmr(d, t, dist)?)
}

/// CV[m̂] = sqrt(VMR/m). Undefined for m = 0.
pub fn cv(m: u64, d: f64, t: f64, dist: &SpeedDistribution) -> Result<f64> {
    if m == 0 {
        return Err(Error::param("m", "coefficient of variation needs m >= 1"));
    }
    Ok((vmr(d, t, dist)? / m as f64).sqrt())
}

/// Mean and variance of the limiting normal law for large m.
pub fn normal_approx(m: u64, d: f64, t: f64, dist: &SpeedDistribution) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::param("m", "normal approximation needs m >= 1"));
    }
    Ok((m as f64, variance(m, d, t, dist)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub m: u64,
    pub d: f64,
    pub t: f64,
    pub mean: f64,
    pub variance: f64,
    pub vmr: f64,
    pub cv: f64,
}

pub fn precision(m: u64, d: f64, t: f64, dist: &SpeedDistribution) -> Result<PrecisionReport> {
    if m == 0 {
        return Err(Error::param("m", "precision report needs m >= 1"));
    }
    let vmr = vmr(d, t, dist)?;
    Ok(PrecisionReport {
        m,
        d,
        t,
        mean: m as f64,
        variance: m as f64 * vmr,
        vmr,
        cv: (vmr / m as f64).sqrt(),
    })
}

/// Density of m̂ on a uniform grid plus a point mass at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumePdf {
    pub grid_start: f64,
    pub grid_step: f64,
    pub densities: Vec<f64>,
    pub atom_at_zero: f64,
}

impl VolumePdf {
    /// All mass in the cell centred on `x`.
    pub fn point_mass(x: f64, grid_step: f64, len: usize) -> Result<Self> {
        require_positive("grid_step", grid_step)?;
        let i = (x / grid_step).round() as usize;
        if i >= len {
            return Err(Error::param("x", "point outside the grid"));
        }
        let mut densities = vec![0.0; len];
        densities[i] = 1.0 / grid_step;
        Ok(Self { grid_start: 0.0, grid_step, densities, atom_at_zero: 0.0 })
    }

    pub fn node(&self, i: usize) -> f64 {
        self.grid_start + self.grid_step * i as f64
    }

    pub fn continuous_mass(&self) -> f64 {
        self.grid_step * self.densities.iter().sum::<f64>()
    }

    pub fn mass(&self) -> f64 {
        self.atom_at_zero + self.continuous_mass()
    }

    fn require_normalized(&self) -> Result<()> {
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Unnormalized { mass });
        }
        Ok(())
    }

    fn require_lattice(&self) -> Result<()> {
        require_positive("grid_step", self.grid_step)?;
        if self.grid_start != 0.0 {
            return Err(Error::GridMismatch(format!(
                "convolution needs a grid anchored at 0, got start {}",
                self.grid_start
            )));
        }
        Ok(())
    }

    /// Mass falling in each bin `[origin + j·width, origin + (j+1)·width)`,
    /// treating each cell's mass as uniform across the cell. The zero atom
    /// lands in the bin containing 0. Mass outside the bins is dropped.
    pub fn bin_masses(&self, origin: f64, width: f64, bins: usize) -> Vec<f64> {
        let mut out = vec![0.0; bins];
        let h = self.grid_step;
        let bin_of = |x: f64| ((x - origin) / width).floor();
        let zero_bin = bin_of(0.0);
        if self.atom_at_zero > 0.0 && zero_bin >= 0.0 && (zero_bin as usize) < bins {
            out[zero_bin as usize] += self.atom_at_zero;
        }
        for (i, &dens) in self.densities.iter().enumerate() {
            if dens == 0.0 {
                continue;
            }
            let lo = self.node(i) - 0.5 * h;
            let hi = lo + h;
            let first = bin_of(lo).max(0.0) as usize;
            let last = bin_of(hi).max(0.0) as usize;
            for (j, slot) in out.iter_mut().enumerate().take(last.min(bins - 1) + 1).skip(first) {
                let b_lo = origin + width * j as f64;
                let b_hi = b_lo + width;
                let overlap = hi.min(b_hi) - lo.max(b_lo);
                if overlap > 0.0 {
                    *slot += dens * overlap;
                }
            }
        }
        out
    }

    /// Generalized inverse of the CDF, linear inside each cell.
    fn quantile(&self, prob: f64) -> f64 {
        if prob <= self.atom_at_zero && self.atom_at_zero > 0.0 {
            return 0.0;
        }
        let h = self.grid_step;
        let target = prob - self.atom_at_zero;
        let mut cum = 0.0;
        let mut last_nonzero = 0;
        for (i, &dens) in self.densities.iter().enumerate() {
            let cell = dens * h;
            if cell <= 0.0 {
                continue;
            }
            last_nonzero = i;
            if cum + cell >= target {
                let frac = ((target - cum) / cell).clamp(0.0, 1.0);
                return (self.node(i) - 0.5 * h + frac * h).max(0.0);
            }
            cum += cell;
        }
        self.node(last_nonzero) + 0.5 * h
    }

    /// True when some grid value sits at least `trough` (a fraction, e.g.
    /// 0.1) below the smaller of the highest densities on either side of it.
    pub fn is_multimodal(&self, trough: f64) -> bool {
        let n = self.densities.len();
        if n < 3 {
            return false;
        }
        let mut right_max = vec![0.0f64; n];
        let mut run = 0.0f64;
        for i in (0..n).rev() {
            run = run.max(self.densities[i]);
            right_max[i] = run;
        }
        let mut left = 0.0f64;
        for (&v, &right) in self.densities.iter().zip(&right_max) {
            let lesser = left.min(right);
            if lesser > 0.0 && v <= (1.0 - trough) * lesser {
                return true;
            }
            left = left.max(v);
        }
        false
    }
}

/// Speed band `(speed_lo, speed_hi]` where a probe leaves `u` guaranteed
/// records, and the mass it sends to m̂ with and without the extra record.
/// For `u = 0`, `no_extra` is the zero atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandMass {
    pub u: u64,
    pub speed_lo: f64,
    pub speed_hi: f64,
    pub no_extra: f64,
    pub extra: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleProbeBreakdown {
    pub bands: Vec<BandMass>,
    /// Mass of far bands (slow speeds) deposited at m̂ = 1 without resolving
    /// their band structure.
    pub lumped_mass: f64,
}

struct Lattice<'a> {
    dist: &'a SpeedDistribution,
    d: f64,
    t: f64,
    h: f64,
    mass: Vec<f64>,
}

impl Lattice<'_> {
    /// Pushes `(s_lo, s_hi]` of band `u` with `k` extra records onto the grid,
    /// integrating P(K = k | s)·g(s) exactly over each cell's preimage.
    fn deposit(&mut self, u: u64, k: u64, s_lo: f64, s_hi: f64) -> Result<f64> {
        if !(s_hi > s_lo) {
            return Ok(0.0);
        }
        let (d, t, h) = (self.d, self.t, self.h);
        let slope = t * (u + k) as f64 / d;
        let uf = u as f64;
        let weight = move |s: f64| {
            let ratio = d / (s * t);
            let w = if k == 1 { ratio - uf } else { uf + 1.0 - ratio };
            w.clamp(0.0, 1.0)
        };
        let m_lo = s_lo * slope;
        let m_hi = s_hi * slope;
        let last_cell = self.mass.len() - 1;
        let first = ((m_lo / h + 0.5).floor() as usize).min(last_cell);
        let last = ((m_hi / h + 0.5).floor() as usize).min(last_cell);
        let mut total = 0.0;
        for i in first..=last {
            let c_lo = (i as f64 - 0.5) * h;
            let c_hi = c_lo + h;
            let a = if i == first { s_lo } else { c_lo.max(m_lo) / slope };
            let b = if i == last { s_hi } else { c_hi.min(m_hi) / slope };
            if !(b > a) {
                continue;
            }
            let cell = self.dist.integrate_interval(a, b, gl8(), &weight)?;
            self.mass[i] += cell;
            total += cell;
        }
        Ok(total)
    }

    fn deposit_at_one(&mut self, mass: f64) {
        let i = ((1.0 / self.h).round() as usize).min(self.mass.len() - 1);
        self.mass[i] += mass;
    }
}

/// Density of m̂ for one probe.
pub fn single_probe_pdf(d: f64, t: f64, dist: &SpeedDistribution, grid_step: f64) -> Result<VolumePdf> {
    single_probe_pdf_with_bands(d, t, dist, grid_step).map(|(pdf, _)| pdf)
}

/// [`single_probe_pdf`] plus the per-band mass accounting.
pub fn single_probe_pdf_with_bands(
    d: f64,
    t: f64,
    dist: &SpeedDistribution,
    grid_step: f64,
) -> Result<(VolumePdf, SingleProbeBreakdown)> {
    check_dt(d, t)?;
    require_positive("grid_step", grid_step)?;
    let h = grid_step;
    // u ≥ 1 keeps m̂ ≤ 2; probes that can skip records reach upper·t/d.
    let top = f64::max(2.0, dist.upper() * t * (1.0 + h) / d);
    let cells = (top / h).ceil() as usize + 1;
    if cells < MIN_GRID_POINTS {
        return Err(Error::GridTooCoarse { step: h, points: cells, required: MIN_GRID_POINTS });
    }
    let (lower, upper) = (dist.lower(), dist.upper());
    let mut lattice = Lattice { dist, d, t, h, mass: vec![0.0; cells] };
    let mut bands = Vec::new();
    let mut atom = 0.0;
    let mut lumped = 0.0;

    // u = 0: fast probes may cross the cordon between two records.
    let crossing = d / t;
    if upper > crossing {
        let lo = crossing.max(lower);
        let extra = lattice.deposit(0, 1, lo, upper)?;
        atom = dist.integrate_interval(lo, upper, gl32(), &|s: f64| (1.0 - d / (s * t)).clamp(0.0, 1.0))?;
        bands.push(BandMass { u: 0, speed_lo: lo, speed_hi: upper, no_extra: atom, extra });
    }

    // Far bands map inside the cell centred on m̂ = 1 and are not resolved.
    let resolve_limit = (2.0 / h).ceil() as u64 + 1;
    let first_u = ((d / (t * upper)).floor() as u64).max(1);
    for u in first_u.. {
        let s_hi = (d / (t * u as f64)).min(upper);
        if s_hi <= lower {
            break;
        }
        let s_lo = (d / (t * (u + 1) as f64)).max(lower);
        let remaining = dist.mass_between(lower, s_hi);
        if u >= resolve_limit || remaining < NEGLIGIBLE_TAIL_MASS {
            lattice.deposit_at_one(remaining);
            lumped += remaining;
            break;
        }
        let band_mass = dist.mass_between(s_lo, s_hi);
        if band_mass < NEGLIGIBLE_BAND_MASS {
            lattice.deposit_at_one(band_mass);
            lumped += band_mass;
            continue;
        }
        let no_extra = lattice.deposit(u, 0, s_lo, s_hi)?;
        let extra = lattice.deposit(u, 1, s_lo, s_hi)?;
        bands.push(BandMass { u, speed_lo: s_lo, speed_hi: s_hi, no_extra, extra });
    }

    let densities = lattice.mass.into_iter().map(|m| m / h).collect();
    let pdf = VolumePdf { grid_start: 0.0, grid_step: h, densities, atom_at_zero: atom };
    Ok((pdf, SingleProbeBreakdown { bands, lumped_mass: lumped }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ConvolutionMethod {
    /// Iterated direct convolution, renormalized after every fold.
    Direct,
    /// One FFT of the lattice measure raised to the m-th power.
    Spectral,
    /// Direct up to [`DIRECT_FOLD_LIMIT`] folds, spectral above.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldedPdf {
    pub pdf: VolumePdf,
    /// Total mass before each renormalization.
    pub fold_factors: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Convolution of two lattice densities sharing a grid step. Zero atoms
/// combine as point masses at the origin.
pub fn convolve(a: &VolumePdf, b: &VolumePdf) -> Result<VolumePdf> {
    a.require_lattice()?;
    b.require_lattice()?;
    if a.grid_step != b.grid_step {
        return Err(Error::GridMismatch(format!("grid steps differ: {} vs {}", a.grid_step, b.grid_step)));
    }
    let h = a.grid_step;
    let (da, db) = (&a.densities, &b.densities);
    let mut out = vec![0.0; (da.len() + db.len()).saturating_sub(1).max(1)];
    let support = |v: &[f64]| -> Option<(usize, usize)> {
        let first = v.iter().position(|&x| x != 0.0)?;
        let last = v.iter().rposition(|&x| x != 0.0)?;
        Some((first, last))
    };
    if let (Some((a0, a1)), Some((b0, b1))) = (support(da), support(db)) {
        for i in a0..=a1 {
            let ai = da[i] * h;
            if ai == 0.0 {
                continue;
            }
            let row = &mut out[i + b0..=i + b1];
            for (slot, &bj) in row.iter_mut().zip(&db[b0..=b1]) {
                *slot += ai * bj;
            }
        }
    }
    if a.atom_at_zero > 0.0 {
        for (slot, &bj) in out.iter_mut().zip(db) {
            *slot += a.atom_at_zero * bj;
        }
    }
    if b.atom_at_zero > 0.0 {
        for (slot, &ai) in out.iter_mut().zip(da) {
            *slot += b.atom_at_zero * ai;
        }
    }
    Ok(VolumePdf { grid_start: 0.0, grid_step: h, densities: out, atom_at_zero: a.atom_at_zero * b.atom_at_zero })
}

fn renormalize(pdf: &mut VolumePdf) -> f64 {
    let total = pdf.mass();
    if total > 0.0 {
        pdf.atom_at_zero /= total;
        for v in &mut pdf.densities {
            *v /= total;
        }
    }
    total
}

/// Density of m̂ for `m` independent probes.
pub fn m_fold_pdf(single: &VolumePdf, m: u32) -> Result<FoldedPdf> {
    m_fold_pdf_with(single, m, ConvolutionMethod::Auto)
}

pub fn m_fold_pdf_with(single: &VolumePdf, m: u32, method: ConvolutionMethod) -> Result<FoldedPdf> {
    if m == 0 {
        return Err(Error::param("m", "m-fold convolution needs m >= 1"));
    }
    single.require_lattice()?;
    single.require_normalized()?;
    if m == 1 {
        return Ok(FoldedPdf { pdf: single.clone(), fold_factors: Vec::new(), warnings: Vec::new() });
    }
    let spectral = match method {
        ConvolutionMethod::Direct => false,
        ConvolutionMethod::Spectral => true,
        ConvolutionMethod::Auto => m > DIRECT_FOLD_LIMIT,
    };
    let (pdf, fold_factors) = if spectral {
        let (pdf, factor) = fold_spectral(single, m);
        (pdf, vec![factor])
    } else {
        let mut acc = single.clone();
        let mut factors = Vec::with_capacity(m as usize - 1);
        for _ in 1..m {
            acc = convolve(&acc, single)?;
            factors.push(renormalize(&mut acc));
        }
        (acc, factors)
    };
    let warnings = fold_factors
        .iter()
        .enumerate()
        .filter(|(_, f)| (**f - 1.0).abs() > FOLD_DRIFT_WARNING)
        .map(|(i, f)| format!("fold {} drifted by {:.3e} before renormalization", i + 2, f - 1.0))
        .collect();
    Ok(FoldedPdf { pdf, fold_factors, warnings })
}

fn fold_spectral(single: &VolumePdf, m: u32) -> (VolumePdf, f64) {
    let h = single.grid_step;
    let n = single.densities.len();
    let len = m as usize * (n - 1) + 1;
    let size = len.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); size];
    for (slot, &dens) in buf.iter_mut().zip(&single.densities) {
        slot.re = dens * h;
    }
    buf[0].re += single.atom_at_zero;
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in &mut buf {
        *z = z.powu(m);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = 1.0 / size as f64;
    let atom = single.atom_at_zero.powi(m as i32);
    // FFT round-off leaves ~1e-16 noise where the exact result is zero.
    let noise = 1e-14;
    let mut densities: Vec<f64> = buf[..len]
        .iter()
        .map(|z| {
            let mass = z.re * scale;
            if mass.abs() < noise { 0.0 } else { mass.max(0.0) / h }
        })
        .collect();
    densities[0] = ((densities[0] * h - atom).max(0.0)) / h;
    if densities[0] * h < noise {
        densities[0] = 0.0;
    }
    let mut pdf = VolumePdf { grid_start: 0.0, grid_step: h, densities, atom_at_zero: atom };
    let factor = renormalize(&mut pdf);
    (pdf, factor)
}

/// Mean and variance of the lattice measure, zero atom included.
pub fn pdf_moments(pdf: &VolumePdf) -> (f64, f64) {
    let h = pdf.grid_step;
    let total = pdf.mass();
    let mean = pdf.densities.iter().enumerate().map(|(i, &v)| v * h * pdf.node(i)).sum::<f64>() / total;
    let centered: f64 = pdf
        .densities
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let dx = pdf.node(i) - mean;
            v * h * dx * dx
        })
        .sum::<f64>()
        + pdf.atom_at_zero * mean * mean;
    (mean, centered / total)
}

/// Equal-tailed interval holding probability `level`.
pub fn interval_estimate(pdf: &VolumePdf, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param("level", format!("must lie in (0, 1), got {level}")));
    }
    pdf.require_normalized()?;
    let tail = 0.5 * (1.0 - level);
    Ok((pdf.quantile(tail), pdf.quantile(1.0 - tail)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn park() -> SpeedDistribution {
        SpeedDistribution::park_i35()
    }

    #[test]
    fn var_kernel_examples() {
        assert_eq!(bernoulli_var_term(20.0, 100.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(bernoulli_var_term(30.0, 100.0, 1.0).unwrap(), 200.0, epsilon = 1e-6);
        assert_relative_eq!(bernoulli_var_term(40.0, 300.0, 4.0).unwrap(), 175.0, epsilon = 1e-6);
        assert!(bernoulli_var_term(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn kernel_vanishes_at_integer_ratios() {
        for j in 1..50 {
            let s = 300.0 / (4.0 * j as f64);
            assert_eq!(var_kernel(s, 300.0, 4.0), 0.0, "j = {j}");
        }
    }

    #[test]
    fn breakpoints_are_ascending_and_inside_support() {
        let bps = variance_breakpoints(300.0, 4.0, &park());
        assert!(bps.windows(2).all(|w| w[0] < w[1]));
        assert!(bps.iter().all(|&s| s > 0.0 && s < 40.0));
        assert_relative_eq!(*bps.last().unwrap(), 37.5);
    }

    #[test]
    fn variance_matches_high_precision_reference() {
        // Independent mpmath adaptive quadrature, 20 digits.
        let p = park();
        assert_relative_eq!(vmr(300.0, 4.0, &p).unwrap(), 0.018_666_973_585_257_7, max_relative = 1e-9);
        assert_relative_eq!(vmr(40.0, 1.0, &p).unwrap(), 0.088_228_341_880_726, max_relative = 1e-9);
        assert_relative_eq!(vmr(110.0, 4.0, &p).unwrap(), 0.053_101_850_754_864_9, max_relative = 1e-9);
        assert_relative_eq!(vmr(150.0, 4.0, &p).unwrap(), 0.096_069_419_960_186_9, max_relative = 1e-9);
        let fast = SpeedDistribution::preset("table2-60mph").unwrap();
        let slow = SpeedDistribution::preset("table2-30mph").unwrap();
        assert_relative_eq!(vmr(14.0, 1.0, &fast).unwrap(), 0.916_644_495_196_83, max_relative = 1e-9);
        assert_relative_eq!(vmr(41.0, 1.0, &slow).unwrap(), 0.019_925_342_845_242_8, max_relative = 1e-9);
        assert_relative_eq!(vmr(7.0, 1.0, &fast).unwrap(), 2.831_437_303_323_15, max_relative = 1e-9);
    }

    #[test]
    fn variance_reference_values() {
        let p = park();
        assert!((variance(1, 300.0, 4.0, &p).unwrap() - 0.019).abs() <= 0.001);
        assert!((variance(8, 300.0, 4.0, &p).unwrap() - 0.149).abs() <= 0.002);
        assert_eq!(variance(0, 300.0, 4.0, &p).unwrap(), 0.0);
        assert!((cv(1, 110.0, 4.0, &p).unwrap() - 0.230).abs() <= 0.001);
        assert!((cv(1, 150.0, 4.0, &p).unwrap() - 0.310).abs() <= 0.001);
        assert!((cv(4, 40.0, 1.0, &p).unwrap() - 0.149).abs() <= 0.001);
        assert!(cv(0, 40.0, 1.0, &p).is_err());
        assert!(normal_approx(0, 40.0, 1.0, &p).is_err());
        let (mean, var) = normal_approx(8, 300.0, 4.0, &p).unwrap();
        assert_eq!(mean, 8.0);
        assert!((var - 0.149).abs() <= 0.002);
    }

    #[test]
    fn table2_vmr_rows() {
        let fast = SpeedDistribution::preset("table2-60mph").unwrap();
        let slow = SpeedDistribution::preset("table2-30mph").unwrap();
        assert!((vmr(14.0, 1.0, &fast).unwrap() - 0.916).abs() <= 0.01);
        assert!((vmr(41.0, 1.0, &slow).unwrap() - 0.019).abs() <= 0.005);
        assert!((vmr(7.0, 1.0, &fast).unwrap() - 2.831).abs() <= 0.02);
    }

    #[test]
    fn precision_report_identities() {
        let r = precision(3, 300.0, 4.0, &park()).unwrap();
        assert_eq!(r.mean, 3.0);
        assert_relative_eq!(r.variance, 3.0 * r.vmr, max_relative = 1e-12);
        assert_relative_eq!(r.cv, r.variance.sqrt() / 3.0, max_relative = 1e-12);
        assert!(precision(0, 300.0, 4.0, &park()).is_err());
    }

    #[test]
    fn vmr_is_exactly_variance_over_m() {
        let p = park();
        let v = vmr(40.0, 1.0, &p).unwrap();
        for m in [1u64, 2, 4, 8] {
            assert_eq!(variance(m, 40.0, 1.0, &p).unwrap() / m as f64, v);
        }
    }

    #[test]
    fn cv_scales_with_inverse_sqrt_m() {
        let p = park();
        for m in [1u64, 3, 10] {
            let a = cv(m, 73.0, 2.0, &p).unwrap();
            let b = cv(4 * m, 73.0, 2.0, &p).unwrap();
            assert_relative_eq!(b, a / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_probe_pdf_scenario_one() {
        let p = park();
        let (pdf, breakdown) = single_probe_pdf_with_bands(300.0, 4.0, &p, DEFAULT_GRID_STEP).unwrap();
        assert_eq!(pdf.atom_at_zero, 0.0);
        assert!((pdf.mass() - 1.0).abs() <= 1e-6, "{}", pdf.mass());
        let (mean, var) = pdf_moments(&pdf);
        assert!((mean - 1.0).abs() <= 1e-4, "{mean}");
        assert!((var - 0.019).abs() <= 0.001, "{var}");
        assert!(pdf.is_multimodal(0.1));
        assert!(pdf.densities.iter().all(|&v| v >= 0.0));

        // Each band's two branches together carry that band's g-mass.
        for band in &breakdown.bands {
            let g_mass = p
                .integrate_weighted(|s| if s > band.speed_lo && s <= band.speed_hi { 1.0 } else { 0.0 }, &[
                    band.speed_lo,
                    band.speed_hi,
                ])
                .unwrap();
            assert!((band.no_extra + band.extra - g_mass).abs() <= 1e-6, "band {}", band.u);
        }
    }

    #[test]
    fn zero_atom_when_probes_can_skip_records() {
        let fast = SpeedDistribution::preset("table2-60mph").unwrap();
        let pdf = single_probe_pdf(7.0, 1.0, &fast, DEFAULT_GRID_STEP).unwrap();
        assert!(pdf.atom_at_zero > 0.5);
        assert!((pdf.mass() - 1.0).abs() <= 1e-6);
        let (mean, var) = pdf_moments(&pdf);
        assert!((mean - 1.0).abs() <= 1e-3, "{mean}");
        let theory = vmr(7.0, 1.0, &fast).unwrap();
        assert!((var - theory).abs() <= 0.02 * theory, "{var} vs {theory}");
    }

    #[test]
    fn degenerate_speed_gives_point_mass() {
        let spike = SpeedDistribution::single(20.0, 1e-9, 0.0, 40.0).unwrap();
        let pdf = single_probe_pdf(100.0, 1.0, &spike, DEFAULT_GRID_STEP).unwrap();
        let (mean, var) = pdf_moments(&pdf);
        assert!((mean - 1.0).abs() <= 1e-6, "{mean}");
        assert!(var < 1e-8, "{var}");
        let peak = pdf.densities.iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(peak * pdf.grid_step, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn coarse_grid_rejected() {
        let err = single_probe_pdf(300.0, 4.0, &park(), 0.05).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse { .. }));
    }

    #[test]
    fn m_fold_identity_and_errors() {
        let pdf = single_probe_pdf(300.0, 4.0, &park(), DEFAULT_GRID_STEP).unwrap();
        let one = m_fold_pdf(&pdf, 1).unwrap();
        assert_eq!(one.pdf, pdf);
        assert!(m_fold_pdf(&pdf, 0).is_err());
        let shifted = VolumePdf { grid_start: 0.5, ..pdf.clone() };
        assert!(matches!(m_fold_pdf(&shifted, 2), Err(Error::GridMismatch(_))));
        let coarse = VolumePdf { grid_step: 2e-3, ..pdf.clone() };
        assert!(matches!(convolve(&pdf, &coarse), Err(Error::GridMismatch(_))));
        let heavy = VolumePdf { atom_at_zero: 0.5, ..pdf.clone() };
        assert!(matches!(m_fold_pdf(&heavy, 2), Err(Error::Unnormalized { .. })));
    }

    #[test]
    fn two_fold_scenario_one() {
        let pdf = single_probe_pdf(300.0, 4.0, &park(), DEFAULT_GRID_STEP).unwrap();
        let two = m_fold_pdf(&pdf, 2).unwrap();
        let (mean, var) = pdf_moments(&two.pdf);
        assert!((mean - 2.0).abs() <= 1e-3);
        assert!((var - 0.037).abs() <= 0.001);
        assert!(two.warnings.is_empty());
        assert!((two.pdf.mass() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn binomial_atom_mixture() {
        // Single-probe law: atom 0.25 plus uniform mass on cells 900..=1100.
        let h = 1e-3;
        let mut densities = vec![0.0; 2001];
        for v in &mut densities[900..=1100] {
            *v = 0.75 / (201.0 * h);
        }
        let single = VolumePdf { grid_start: 0.0, grid_step: h, densities, atom_at_zero: 0.25 };
        let three = m_fold_pdf(&single, 3).unwrap();
        assert_relative_eq!(three.pdf.atom_at_zero, 0.25f64.powi(3), max_relative = 1e-12);
        // Mass of exactly one surviving probe: 3·q²·(1 − q).
        let one_probe: f64 = three.pdf.densities[900..=1100].iter().sum::<f64>() * h;
        assert_relative_eq!(one_probe, 3.0 * 0.0625 * 0.75, max_relative = 1e-12);
        let (mean, _) = pdf_moments(&three.pdf);
        assert_relative_eq!(mean, 3.0 * 0.75 * 1.0, max_relative = 1e-12);
    }

    #[test]
    fn spectral_matches_direct() {
        let fast = SpeedDistribution::preset("table2-60mph").unwrap();
        for (d, t) in [(300.0, 4.0), (7.0, 1.0)] {
            let dist = if d == 7.0 { fast.clone() } else { park() };
            let single = single_probe_pdf(d, t, &dist, 2e-3).unwrap();
            let direct = m_fold_pdf_with(&single, 5, ConvolutionMethod::Direct).unwrap().pdf;
            let spectral = m_fold_pdf_with(&single, 5, ConvolutionMethod::Spectral).unwrap().pdf;
            assert_eq!(direct.densities.len(), spectral.densities.len());
            assert!((direct.atom_at_zero - spectral.atom_at_zero).abs() <= 1e-12);
            for (a, b) in direct.densities.iter().zip(&spectral.densities) {
                assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn interval_estimates() {
        let point = VolumePdf::point_mass(1.0, 1e-3, 2001).unwrap();
        let (lo, hi) = interval_estimate(&point, 0.95).unwrap();
        assert!((lo - 1.0).abs() <= 5e-4 && (hi - 1.0).abs() <= 5e-4, "{lo} {hi}");
        assert!(interval_estimate(&point, 1.0).is_err());
        assert!(interval_estimate(&point, 0.0).is_err());

        let pdf = single_probe_pdf(300.0, 4.0, &park(), DEFAULT_GRID_STEP).unwrap();
        let (lo, hi) = interval_estimate(&pdf, 0.95).unwrap();
        assert!(lo < 1.0 && 1.0 < hi);
        let (lo_full, hi_full) = interval_estimate(&pdf, 1.0 - 1e-12).unwrap();
        let first = pdf.densities.iter().position(|&v| v > 0.0).unwrap();
        let last = pdf.densities.iter().rposition(|&v| v > 0.0).unwrap();
        assert!((lo_full - (pdf.node(first) - 5e-4)).abs() <= 2e-3);
        assert!((hi_full - (pdf.node(last) + 5e-4)).abs() <= 2e-3);

        let unnormalized = VolumePdf { atom_at_zero: 0.1, ..pdf };
        assert!(interval_estimate(&unnormalized, 0.9).is_err());
    }

    #[test]
    fn interval_with_atom_starts_at_zero() {
        let fast = SpeedDistribution::preset("table2-60mph").unwrap();
        let pdf = single_probe_pdf(7.0, 1.0, &fast, DEFAULT_GRID_STEP).unwrap();
        let (lo, hi) = interval_estimate(&pdf, 0.9).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi > 1.0);
    }

    #[test]
    fn moments_of_point_mass() {
        let point = VolumePdf::point_mass(1.0, 1e-3, 2001).unwrap();
        let (mean, var) = pdf_moments(&point);
        assert_relative_eq!(mean, 1.0, epsilon = 1e-12);
        assert!(var.abs() < 1e-20);
    }

    #[test]
    fn bin_masses_conserve_mass() {
        let pdf = single_probe_pdf(300.0, 4.0, &park(), DEFAULT_GRID_STEP).unwrap();
        let bins = pdf.bin_masses(0.0, 0.02, 200);
        assert_relative_eq!(bins.iter().sum::<f64>(), pdf.mass(), epsilon = 1e-12);
    }
}
