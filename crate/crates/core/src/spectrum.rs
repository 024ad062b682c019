//! Spectral estimation: averaged periodogram (Welch) for noise floors and
//! a single-window amplitude spectrum for excitation peaks.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;

/// One-sided amplitude spectral density curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    /// Bin frequencies, Hz.
    pub frequencies: Vec<f64>,
    /// ASD per bin, T/sqrt(Hz).
    pub asd: Vec<f64>,
    /// Number of averaged segments.
    pub segments: usize,
}

impl SpectralDensity {
    /// Median ASD over bins with frequency in [f_lo, f_hi].
    pub fn median_in_band(&self, f_lo: f64, f_hi: f64) -> Option<f64> {
        let mut vals: Vec<f64> = self
            .frequencies
            .iter()
            .zip(&self.asd)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(_, a)| *a)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(vals[vals.len() / 2])
    }

    /// Bin with the largest ASD, excluding DC.
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.frequencies
            .iter()
            .zip(&self.asd)
            .skip(1)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(f, a)| (*f, *a))
    }
}

/// Welch estimate of the one-sided ASD: Hann-tapered segments with 50%
/// overlap, per-segment mean removal, periodograms averaged.
pub fn psd_estimate(series: &TimeSeries, segment_length: usize) -> Result<SpectralDensity> {
    if segment_length < 2 {
        return Err(Error::validation("segment_length must be >= 2"));
    }
    if series.len() < 2 * segment_length {
        return Err(Error::validation(format!(
            "series too short for PSD: {} samples < 2 * {segment_length}",
            series.len()
        )));
    }
    let fs = series.sample_rate();
    let n = segment_length;
    let hop = n / 2;
    let window: Vec<f64> = (0..n)
        .map(|i| {
            let x = std::f64::consts::TAU * i as f64 / n as f64;
            0.5 * (1.0 - x.cos())
        })
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);

    let half = n / 2;
    let mut psd_acc = vec![0.0_f64; half + 1];
    let mut segments = 0usize;
    let data = series.samples();
    let mut start = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    while start + n <= data.len() {
        let seg = &data[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for (b, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in psd_acc.iter_mut().enumerate() {
            let mag2 = buf[k].norm_sqr();
            // One-sided: double interior bins, not DC or Nyquist.
            let one_sided = if k == 0 || (k == half && n % 2 == 0) {
                1.0
            } else {
                2.0
            };
            *p += one_sided * mag2 / (fs * window_power);
        }
        segments += 1;
        start += hop;
    }

    let frequencies: Vec<f64> = (0..=half).map(|k| k as f64 * fs / n as f64).collect();
    let asd = psd_acc
        .iter()
        .map(|p| (p / segments as f64).sqrt())
        .collect();
    Ok(SpectralDensity {
        frequencies,
        asd,
        segments,
    })
}

/// Discrete amplitude spectrum of a single rectangular window, mean
/// removed: amplitude of bin k is (2/N)|X_k|, in the series' units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSpectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl AmplitudeSpectrum {
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.frequencies
            .iter()
            .zip(&self.amplitudes)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(f, a)| (*f, *a))
    }
}

pub fn amplitude_spectrum(series: &TimeSeries) -> Result<AmplitudeSpectrum> {
    let n = series.len();
    if n < 2 {
        return Err(Error::validation("amplitude spectrum needs >= 2 samples"));
    }
    let mean = series.mean();
    let mut buf: Vec<Complex<f64>> = series
        .samples()
        .iter()
        .map(|&x| Complex::new(x - mean, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let fs = series.sample_rate();
    let frequencies = (0..=half).map(|k| k as f64 * fs / n as f64).collect();
    let amplitudes = buf[..=half]
        .iter()
        .map(|x| 2.0 / n as f64 * x.norm())
        .collect();
    Ok(AmplitudeSpectrum {
        frequencies,
        amplitudes,
    })
}
