//! Measurement extraction and stability statistics: single-bin DFT
//! amplitude at the excitation frequency, square-wave on/off differencing
//! with transient exclusion, the overlapping Allan estimator, and the
//! small conversions the ratio protocols need.
//!
//! Two averaging conventions coexist and are kept distinct: the standard
//! error of a mean over time t falls as asd/sqrt(t), while the Allan
//! deviation of white noise is asd/sqrt(2 tau).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;

/// Amplitude of the spectral component at `f0`, in the series' units.
///
/// The window is trimmed to an integer number of excitation cycles
/// (rectangular window, single-bin projection):
/// A = (2/N) |sum x_n exp(-i 2 pi f0 n / fs)|.
/// A DC offset does not leak into a nonzero bin under coherent sampling.
pub fn dft_bin_amplitude(series: &TimeSeries, f0: f64) -> Result<f64> {
    let fs = series.sample_rate();
    if !(f0 > 0.0) || f0 >= fs / 2.0 {
        return Err(Error::validation(format!(
            "excitation frequency {f0} Hz must lie in (0, {})",
            fs / 2.0
        )));
    }
    let n = trim_to_whole_cycles(series.len(), fs, f0)?;
    let w = std::f64::consts::TAU * f0 / fs;
    let mut re = 0.0;
    let mut im = 0.0;
    for (j, &x) in series.samples()[..n].iter().enumerate() {
        let (s, c) = (w * j as f64).sin_cos();
        re += x * c;
        im -= x * s;
    }
    Ok(2.0 / n as f64 * (re * re + im * im).sqrt())
}

/// Largest sample count <= len spanning a whole number of f0 cycles.
pub(crate) fn trim_to_whole_cycles(len: usize, fs: f64, f0: f64) -> Result<usize> {
    let cycles = (len as f64 * f0 / fs).floor();
    if cycles < 1.0 {
        return Err(Error::validation(format!(
            "window holds less than one cycle of {f0} Hz at {fs} Hz"
        )));
    }
    let n = (cycles * fs / f0).round() as usize;
    Ok(n.min(len))
}

/// Square-wave on/off protocol timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareWaveProtocol {
    /// Duration of each on (and each off) state, s.
    pub half_period: f64,
    /// Settling interval discarded at the start of every half, s.
    pub transient_exclusion: f64,
    /// Number of on/off cycles to evaluate.
    pub cycles: u32,
}

impl SquareWaveProtocol {
    pub fn new(half_period: f64, transient_exclusion: f64, cycles: u32) -> Result<Self> {
        let p = Self {
            half_period,
            transient_exclusion,
            cycles,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_period > 0.0) {
            return Err(Error::validation("half_period must be positive"));
        }
        if !(self.transient_exclusion >= 0.0 && self.transient_exclusion < self.half_period) {
            return Err(Error::validation(format!(
                "transient_exclusion {} must lie in [0, half_period {})",
                self.transient_exclusion, self.half_period
            )));
        }
        if self.cycles < 1 {
            return Err(Error::validation("need at least one cycle"));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        2.0 * self.half_period
    }

    pub fn total_duration(&self) -> f64 {
        self.cycles as f64 * self.period()
    }
}

/// Result of the on/off differencing protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareWaveExtraction {
    /// Cycle-averaged on-minus-off step, series units.
    pub mean_step: f64,
    /// Standard error of the mean across cycles (0 for a single cycle).
    pub standard_error: f64,
    /// Average level of the off state, for baseline-shift diagnostics.
    pub off_mean: f64,
    /// Per-cycle differences.
    pub per_cycle: Vec<f64>,
}

/// Difference the current-on and current-off states of a
/// protocol-synchronous record (the series starts at an on edge),
/// discarding the transient at each edge. Adding any constant to the
/// whole series leaves the result unchanged.
pub fn square_wave_extract(
    series: &TimeSeries,
    proto: &SquareWaveProtocol,
) -> Result<SquareWaveExtraction> {
    proto.validate()?;
    let fs = series.sample_rate();
    if series.duration() + 0.5 / fs < proto.total_duration() {
        return Err(Error::validation(format!(
            "series covers {:.3} s but the protocol needs {:.3} s",
            series.duration(),
            proto.total_duration()
        )));
    }
    let mut per_cycle = Vec::with_capacity(proto.cycles as usize);
    let mut off_acc = 0.0;
    let mut off_n = 0usize;
    let data = series.samples();
    for k in 0..proto.cycles as u64 {
        let t0 = k as f64 * proto.period();
        let on = mean_between(
            data,
            fs,
            t0 + proto.transient_exclusion,
            t0 + proto.half_period,
        )?;
        let off = mean_between(
            data,
            fs,
            t0 + proto.half_period + proto.transient_exclusion,
            t0 + proto.period(),
        )?;
        off_acc += off.0;
        off_n += off.1;
        per_cycle.push(on.0 / on.1 as f64 - off.0 / off.1 as f64);
    }
    let n = per_cycle.len() as f64;
    let mean_step = per_cycle.iter().sum::<f64>() / n;
    let standard_error = if per_cycle.len() > 1 {
        let var = per_cycle
            .iter()
            .map(|d| (d - mean_step).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(SquareWaveExtraction {
        mean_step,
        standard_error,
        off_mean: off_acc / off_n as f64,
        per_cycle,
    })
}

fn mean_between(data: &[f64], fs: f64, t_from: f64, t_to: f64) -> Result<(f64, usize)> {
    let i0 = (t_from * fs).round() as usize;
    let i1 = ((t_to * fs).round() as usize).min(data.len());
    if i0 >= i1 {
        return Err(Error::validation(format!(
            "empty averaging window [{t_from}, {t_to}) s"
        )));
    }
    Ok((data[i0..i1].iter().sum(), i1 - i0))
}

/// Allan deviation curve with pair counts for confidence bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllanCurve {
    /// Averaging times snapped to whole sample periods, s.
    pub taus: Vec<f64>,
    /// Deviation at each tau, series units.
    pub sigmas: Vec<f64>,
    /// Overlapping adjacent-bin pairs entering each point.
    pub counts: Vec<usize>,
    /// Requested taus dropped because the series was too short.
    pub skipped_taus: Vec<f64>,
}

impl AllanCurve {
    /// Relative one-sigma confidence half-width at point `i`.
    pub fn ci_rel(&self, i: usize) -> f64 {
        1.0 / (self.counts[i] as f64).sqrt()
    }

    /// Point with the smallest deviation.
    pub fn min_point(&self) -> Option<(f64, f64)> {
        self.taus
            .iter()
            .zip(&self.sigmas)
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(t, s)| (*t, *s))
    }
}

/// Overlapping Allan deviation over tau-averaged bins:
/// sigma^2(tau) = mean over all overlapping adjacent-bin pairs of
/// (ybar_{k+1} - ybar_k)^2 / 2. White noise of one-sided ASD d gives
/// sigma(tau) = d / sqrt(2 tau); a random walk rises as sqrt(tau).
pub fn allan_deviation(series: &TimeSeries, taus: &[f64]) -> Result<AllanCurve> {
    if series.len() < 2 {
        return Err(Error::validation("allan deviation needs at least 2 samples"));
    }
    if taus.is_empty() {
        return Err(Error::validation("no averaging times requested"));
    }
    let fs = series.sample_rate();
    let n = series.len();
    // Prefix sums over mean-removed data make each tau an O(n) pass
    // without losing precision to a large common offset.
    let mean = series.mean();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in series.samples() {
        acc += x - mean;
        prefix.push(acc);
    }

    let mut ms: Vec<usize> = Vec::new();
    let mut skipped = Vec::new();
    for &tau in taus {
        if !(tau > 0.0) {
            skipped.push(tau);
            continue;
        }
        let m = (tau * fs).round().max(1.0) as usize;
        // Spec rule: tau may not exceed a third of the record, and two
        // full bins must fit.
        if (m as f64 / fs) > series.duration() / 3.0 + 0.5 / fs || 2 * m + 1 > n + 1 {
            skipped.push(tau);
            continue;
        }
        ms.push(m);
    }
    ms.sort_unstable();
    ms.dedup();

    let mut out_taus = Vec::with_capacity(ms.len());
    let mut sigmas = Vec::with_capacity(ms.len());
    let mut counts = Vec::with_capacity(ms.len());
    for m in ms {
        let pairs = n - 2 * m + 1;
        let inv_m = 1.0 / m as f64;
        let mut sum_sq = 0.0;
        for j in 0..pairs {
            let y0 = (prefix[j + m] - prefix[j]) * inv_m;
            let y1 = (prefix[j + 2 * m] - prefix[j + m]) * inv_m;
            let d = y1 - y0;
            sum_sq += d * d;
        }
        out_taus.push(m as f64 / fs);
        sigmas.push((sum_sq / (2.0 * pairs as f64)).sqrt());
        counts.push(pairs);
    }
    Ok(AllanCurve {
        taus: out_taus,
        sigmas,
        counts,
        skipped_taus: skipped,
    })
}

/// Noise regime inferred from the local log-log slope of an Allan curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseRegime {
    /// Slope near -1/2: uncorrelated (white) noise dominates.
    White,
    /// Slope near 0: flicker floor.
    Flicker,
    /// Slope near +1/2: random walk or drift.
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecadeSlope {
    /// Decade start, i.e. taus in [10^exp, 10^(exp+1)).
    pub decade_exp: i32,
    pub slope: f64,
    pub label: NoiseRegime,
}

/// Least-squares slope of log sigma vs log tau per decade of tau.
pub fn noise_slope_id(curve: &AllanCurve) -> Result<Vec<DecadeSlope>> {
    let mut by_decade: std::collections::BTreeMap<i32, Vec<(f64, f64)>> =
        std::collections::BTreeMap::new();
    for (&tau, &sigma) in curve.taus.iter().zip(&curve.sigmas) {
        if tau > 0.0 && sigma > 0.0 {
            by_decade
                .entry(tau.log10().floor() as i32)
                .or_default()
                .push((tau.log10(), sigma.log10()));
        }
    }
    let mut out = Vec::new();
    for (exp, pts) in by_decade {
        if pts.len() < 4 {
            continue;
        }
        let slope = ols_slope(&pts);
        let label = if slope < -0.25 {
            NoiseRegime::White
        } else if slope > 0.25 {
            NoiseRegime::RandomWalk
        } else {
            NoiseRegime::Flicker
        };
        out.push(DecadeSlope {
            decade_exp: exp,
            slope,
            label,
        });
    }
    if out.is_empty() {
        return Err(Error::validation(
            "no decade holds the 4+ points needed for slope identification",
        ));
    }
    Ok(out)
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Seconds of averaging needed for the mean of a white floor `floor_asd`
/// to reach `target`: t = (floor/target)^2, i.e. the sigma(t) = d/sqrt(t)
/// convention, not the Allan d/sqrt(2 tau).
pub fn required_integration_time(floor_asd: f64, target: f64) -> Result<f64> {
    if !(floor_asd > 0.0) || !(target > 0.0) {
        return Err(Error::validation("floor and target must be positive"));
    }
    Ok((floor_asd / target).powi(2))
}

/// Equivalent current difference from a residual flux and a conversion
/// coefficient (same flux unit over amperes).
pub fn flux_to_current(flux: f64, coefficient: f64) -> Result<f64> {
    if !(coefficient > 0.0) {
        return Err(Error::validation(format!(
            "conversion coefficient must be positive, got {coefficient}"
        )));
    }
    Ok(flux / coefficient)
}
