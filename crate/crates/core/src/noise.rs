//! Parametric sensor-noise model and calibrated time-domain synthesis.
//!
//! One-sided amplitude spectral densities throughout. The model PSD is
//!
//! ```text
//! S(f) = white^2 + white^2 * flicker_knee / f + random_walk^2 / f^2  (+ spurs)
//! ```
//!
//! so the flicker term crosses the white floor at `flicker_knee`.
//! Synthesis: white noise sample-by-sample, flicker by spectral shaping,
//! random walk by integrating white steps, spurs as fixed-frequency
//! sinusoids with a seeded random phase.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;

/// A narrow line interferer at a fixed frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spur {
    pub frequency_hz: f64,
    pub amplitude_t: f64,
}

/// One-sided ASD description of the magnetometer noise, in tesla units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// White floor, T/sqrt(Hz).
    pub white_asd: f64,
    /// Frequency below which the 1/f term exceeds the white floor, Hz.
    pub flicker_knee: f64,
    /// Random-walk coefficient, T*sqrt(Hz): PSD contribution rw^2/f^2.
    pub random_walk_asd: f64,
    pub line_spurs: Vec<Spur>,
}

impl NoiseModel {
    pub fn new(
        white_asd: f64,
        flicker_knee: f64,
        random_walk_asd: f64,
        line_spurs: Vec<Spur>,
    ) -> Result<Self> {
        let m = Self {
            white_asd,
            flicker_knee,
            random_walk_asd,
            line_spurs,
        };
        m.validate()?;
        Ok(m)
    }

    /// Noise-free model.
    pub fn quiet() -> Self {
        Self {
            white_asd: 0.0,
            flicker_knee: 0.0,
            random_walk_asd: 0.0,
            line_spurs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.white_asd < 0.0 || self.flicker_knee < 0.0 || self.random_walk_asd < 0.0 {
            return Err(Error::validation(
                "noise amplitude parameters must be non-negative",
            ));
        }
        for s in &self.line_spurs {
            if !(s.frequency_hz > 0.0) || s.amplitude_t < 0.0 {
                return Err(Error::validation(format!(
                    "spur needs frequency > 0 and amplitude >= 0, got {} Hz / {} T",
                    s.frequency_hz, s.amplitude_t
                )));
            }
        }
        Ok(())
    }

    /// Model ASD at `f`, excluding spurs, in T/sqrt(Hz).
    pub fn asd(&self, f: f64) -> f64 {
        let w2 = self.white_asd * self.white_asd;
        let mut s = w2;
        if f > 0.0 {
            s += w2 * self.flicker_knee / f;
            s += self.random_walk_asd * self.random_walk_asd / (f * f);
        }
        s.sqrt()
    }

    pub fn is_quiet(&self) -> bool {
        self.white_asd == 0.0 && self.random_walk_asd == 0.0 && self.line_spurs.is_empty()
    }

    /// Map the model onto a time axis compressed by `factor` (> 1 speeds
    /// the experiment up). Chosen so that the Allan deviation curve of a
    /// compressed realization equals the original with tau scaled by
    /// 1/factor: white /sqrt(c), knee *c, random walk *sqrt(c), spur
    /// frequencies *c.
    pub fn time_scaled(&self, factor: f64) -> Self {
        Self {
            white_asd: self.white_asd / factor.sqrt(),
            flicker_knee: self.flicker_knee * factor,
            random_walk_asd: self.random_walk_asd * factor.sqrt(),
            line_spurs: self
                .line_spurs
                .iter()
                .map(|s| Spur {
                    frequency_hz: s.frequency_hz * factor,
                    amplitude_t: s.amplitude_t,
                })
                .collect(),
        }
    }
}

/// Synthesize a zero-mean realization of `model`, deterministic in `seed`.
pub fn synthesize_noise(
    model: &NoiseModel,
    sample_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<TimeSeries> {
    model.validate()?;
    if !(sample_rate > 0.0) {
        return Err(Error::validation("sample rate must be positive"));
    }
    let n = (duration * sample_rate).round() as usize;
    if n < 2 {
        return Err(Error::validation(format!(
            "need duration * sample_rate >= 2, got {n} samples"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut samples = vec![0.0_f64; n];

    // White floor: iid Gaussians scaled to the requested one-sided ASD.
    if model.white_asd > 0.0 {
        let sigma = model.white_asd * (sample_rate / 2.0).sqrt();
        for v in samples.iter_mut() {
            *v += sigma * gauss(&mut rng);
        }
    }

    // Flicker: Hermitian spectrum with |X_k|^2 matching A^2/f, A^2 =
    // white^2 * knee. The DC bin is zeroed, which keeps the realization
    // zero-mean.
    if model.white_asd > 0.0 && model.flicker_knee > 0.0 {
        let a2 = model.white_asd * model.white_asd * model.flicker_knee;
        add_shaped(&mut samples, sample_rate, &mut rng, |f| a2 / f);
    }

    // Random walk: integrate white steps. Step variance q^2 = 2 pi^2
    // rw^2 / fs makes the discrete integrator PSD equal rw^2/f^2 for
    // f well below Nyquist.
    if model.random_walk_asd > 0.0 {
        let q = model.random_walk_asd * std::f64::consts::PI * (2.0 / sample_rate).sqrt();
        let mut acc = 0.0;
        for v in samples.iter_mut() {
            acc += q * gauss(&mut rng);
            *v += acc;
        }
    }

    for spur in &model.line_spurs {
        if spur.amplitude_t == 0.0 {
            continue;
        }
        let phase: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        let w = std::f64::consts::TAU * spur.frequency_hz / sample_rate;
        for (i, v) in samples.iter_mut().enumerate() {
            *v += spur.amplitude_t * (w * i as f64 + phase).sin();
        }
    }

    TimeSeries::new(sample_rate, 0.0, samples)
}

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream layout simple.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Add a realization with one-sided PSD `psd(f)` via frequency-domain
/// shaping of a complex Gaussian spectrum.
fn add_shaped(
    samples: &mut [f64],
    sample_rate: f64,
    rng: &mut ChaCha12Rng,
    psd: impl Fn(f64) -> f64,
) {
    let n = samples.len();
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    let df = sample_rate / n as f64;
    let half = n / 2;
    for k in 1..=half {
        let f = k as f64 * df;
        // E|X_k|^2 = S(f_k) * fs * n / 2 reproduces the target PSD in
        // the unnormalized-DFT convention.
        let scale = (psd(f) * sample_rate * n as f64 / 2.0).sqrt();
        let (g1, g2) = (gauss(rng), gauss(rng));
        let x = if k == half && n % 2 == 0 {
            // Nyquist bin of an even-length transform must be real.
            Complex::new(scale * g1, 0.0)
        } else {
            Complex::new(scale * g1 / 2.0_f64.sqrt(), scale * g2 / 2.0_f64.sqrt())
        };
        spectrum[k] = x;
        if k != half || n % 2 != 0 {
            spectrum[n - k] = x.conj();
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let norm = 1.0 / n as f64;
    for (v, x) in samples.iter_mut().zip(spectrum.iter()) {
        *v += x.re * norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_std(xs: &[f64]) -> f64 {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    }

    #[test]
    fn white_variance_identity() {
        // std = asd * sqrt(fs/2) for a pure white model.
        let model = NoiseModel::new(300e-12, 0.0, 0.0, vec![]).unwrap();
        let fs = 10_000.0;
        let ts = synthesize_noise(&model, fs, 100.0, 7).unwrap();
        let expected = 300e-12 * (fs / 2.0).sqrt();
        let got = sample_std(ts.samples());
        assert!(
            (got / expected - 1.0).abs() < 0.03,
            "std {got:e} vs {expected:e}"
        );
    }

    #[test]
    fn all_zero_model_gives_zero_series() {
        let ts = synthesize_noise(&NoiseModel::quiet(), 1000.0, 1.0, 3).unwrap();
        assert!(ts.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reproducible_for_equal_seeds() {
        let model = NoiseModel::new(300e-12, 11.5, 1e-13, vec![Spur {
            frequency_hz: 50.0,
            amplitude_t: 1e-9,
        }])
        .unwrap();
        let a = synthesize_noise(&model, 2000.0, 2.0, 42).unwrap();
        let b = synthesize_noise(&model, 2000.0, 2.0, 42).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn distinct_seeds_decorrelated() {
        let model = NoiseModel::new(300e-12, 0.0, 0.0, vec![]).unwrap();
        let a = synthesize_noise(&model, 2000.0, 50.0, 1).unwrap();
        let b = synthesize_noise(&model, 2000.0, 50.0, 2).unwrap();
        let n = a.len() as f64;
        let (sa, sb) = (sample_std(a.samples()), sample_std(b.samples()));
        let cov = a
            .samples()
            .iter()
            .zip(b.samples())
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / n;
        let corr = cov / (sa * sb);
        assert!(corr.abs() < 3.0 / n.sqrt(), "corr {corr}");
    }

    #[test]
    fn too_short_request_rejected() {
        let model = NoiseModel::new(1e-12, 0.0, 0.0, vec![]).unwrap();
        assert!(synthesize_noise(&model, 10.0, 0.05, 0).is_err());
    }

    #[test]
    fn asd_composition() {
        let model = NoiseModel::new(300e-12, 12.0, 2e-12, vec![]).unwrap();
        // At the knee, white and flicker contribute equally.
        let at_knee = model.asd(12.0);
        let expect = (2.0 * 300e-12_f64.powi(2) + (2e-12_f64 / 12.0).powi(2)).sqrt();
        assert!((at_knee / expect - 1.0).abs() < 1e-12);
        assert!(model.asd(1e6) < model.asd(0.01));
    }

    #[test]
    fn time_scaling_preserves_flicker_coefficient() {
        let model = NoiseModel::new(300e-12, 10.0, 1e-12, vec![]).unwrap();
        let scaled = model.time_scaled(25.0);
        let a2 = model.white_asd.powi(2) * model.flicker_knee;
        let a2s = scaled.white_asd.powi(2) * scaled.flicker_knee;
        assert!((a2s / a2 - 1.0).abs() < 1e-12);
        assert!((scaled.white_asd - 300e-12 / 5.0).abs() < 1e-24);
        assert!((scaled.random_walk_asd - 5e-12).abs() < 1e-24);
    }
}
