//! End-to-end comparator campaigns: drive the ratio windings, develop the
//! residual gap flux through the equivalent circuit, add calibrated
//! sensor noise, demodulate, and aggregate statistics into a report.
//!
//! The injected ratio error is lumped at the flux summation point as a
//! frequency-dependent ampere-turn imbalance; a slow random walk on that
//! error models the long-term drift that turns the Allan curve back up.
//! The sensor defaults to an idealized transducer (flux in, flux out);
//! enabling the tracker routes the field through the closed FM loop,
//! whose first-order response is the system's lock-in bandwidth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{
    allan_deviation, dft_bin_amplitude, noise_slope_id, square_wave_extract, AllanCurve,
    DecadeSlope, SquareWaveProtocol,
};
use crate::error::{Error, Result};
use crate::fit::{fit_frequency_response, fit_line, FitResult, ResponseModel};
use crate::magcore::{
    conversion_coefficient, ratio_error_model, CoreGeometry, CoreMaterial, WindingConfig,
};
use crate::noise::{synthesize_noise, NoiseModel, Spur};
use crate::nvsensor::{track_field, SensorPhysics, TrackerConfig};
use crate::spectrum::amplitude_spectrum;
use crate::timeseries::TimeSeries;

/// Injected frequency-dependent ratio error, eps(f) = eps_h + eps_e*f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioError {
    /// Frequency-flat term, A/A.
    pub eps_h: f64,
    /// Linear frequency coefficient, (A/A)/Hz.
    pub eps_e: f64,
}

impl RatioError {
    pub fn at(&self, frequency: f64) -> f64 {
        ratio_error_model(frequency, self.eps_h, self.eps_e)
    }
}

/// Full description of a simulated comparator and its environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorConfig {
    pub geometry: CoreGeometry,
    pub material: CoreMaterial,
    pub windings: WindingConfig,
    /// AC ratio error injected at the flux summation point.
    pub injected_ratio_error: RatioError,
    /// DC ratio error, A/A; kept independent of the AC model.
    pub dc_ratio_error: f64,
    /// Random-walk density of the injected AC error, (A/A)/sqrt(s).
    /// Drives the long-tau upturn of the AC Allan curve.
    pub ratio_error_walk: f64,
    /// Random-walk density of the DC error, (A/A)/sqrt(s); the DC error
    /// drifts on its own scale.
    pub dc_ratio_error_walk: f64,
    pub noise: NoiseModel,
    pub sensor: SensorPhysics,
    pub tracker: TrackerConfig,
    /// Route the field through the closed FM loop instead of the
    /// idealized transducer.
    pub use_tracker: bool,
    /// DC bias from the auxiliary winding, T; keeps the working point
    /// out of the near-zero nonlinear region.
    pub offset_field_t: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl ComparatorConfig {
    /// Calibrated defaults: the 10/6/2 cm toroid with a 2 cm gap,
    /// 10-turn ratio windings, 76 uA/A error at 67 Hz, 150 nA/A DC
    /// error, and the sensitive-mode noise floor of 300 pT/rtHz with
    /// line spurs and a flicker knee placing the sub-hertz density at
    /// sqrt(40) times the 67 Hz density.
    pub fn paper_defaults() -> Self {
        Self {
            geometry: CoreGeometry {
                outer_diameter: 0.10,
                inner_diameter: 0.06,
                thickness: 0.02,
                gap_length: 0.02,
            },
            material: CoreMaterial {
                relative_permeability: 3.0e4,
                // Solved from a 20% flux-transfer droop at 67 Hz.
                eddy_corner_frequency: 89.33,
                hysteresis_attenuation: 0.0,
            },
            windings: WindingConfig {
                primary_turns: 10,
                secondary_turns: 10,
                auxiliary_turns: 1,
            },
            injected_ratio_error: RatioError {
                eps_h: 4.0e-5,
                eps_e: 36.0e-6 / 67.0,
            },
            dc_ratio_error: 1.5e-7,
            ratio_error_walk: 2.2e-9,
            dc_ratio_error_walk: 1.3e-9,
            noise: NoiseModel {
                white_asd: 300e-12,
                flicker_knee: 2.01,
                random_walk_asd: 0.0,
                line_spurs: vec![
                    Spur {
                        frequency_hz: 50.0,
                        amplitude_t: 1e-9,
                    },
                    Spur {
                        frequency_hz: 60.0,
                        amplitude_t: 1e-9,
                    },
                ],
            },
            sensor: SensorPhysics::default(),
            tracker: TrackerConfig::default(),
            use_tracker: false,
            offset_field_t: 5.0e-5,
            sample_rate: 1.0e4,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.material.validate()?;
        self.noise.validate()?;
        self.sensor.validate()?;
        if self.windings.secondary_turns == 0 {
            return Err(Error::validation("ratio windings need at least one turn"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::validation("sample rate must be positive"));
        }
        if self.ratio_error_walk < 0.0 || self.dc_ratio_error_walk < 0.0 {
            return Err(Error::validation("drift densities must be non-negative"));
        }
        if self.use_tracker {
            self.tracker.validate(self.sample_rate)?;
            let guard = self.tracker.guard_band(&self.sensor);
            if self.offset_field_t.abs() <= guard {
                return Err(Error::validation(format!(
                    "offset field {:.3e} T sits inside the nonlinear guard band {:.3e} T",
                    self.offset_field_t, guard
                )));
            }
        }
        Ok(())
    }

    /// Flux per ampere of current difference at drive frequency `f`,
    /// including the sensor-chain droop when the tracker is in use.
    pub fn effective_coefficient(&self, frequency: f64) -> Result<f64> {
        let k = conversion_coefficient(
            &self.geometry,
            &self.material,
            self.windings.secondary_turns,
            frequency,
        )?;
        Ok(if self.use_tracker {
            let r = frequency / self.tracker.loop_bandwidth;
            k / (1.0 + r * r).sqrt()
        } else {
            k
        })
    }

    /// The same experiment on a clock running `factor` times faster:
    /// every frequency parameter scales up, every time parameter scales
    /// down, and noise levels follow the spectral mapping that keeps the
    /// Allan curve invariant with tau divided by `factor`. Only the
    /// idealized sensor path supports this.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        if self.use_tracker {
            return Err(Error::validation(
                "time compression is only defined for the idealized sensor path",
            ));
        }
        let mut scaled = self.clone();
        scaled.noise = self.noise.time_scaled(factor);
        scaled.ratio_error_walk = self.ratio_error_walk * factor.sqrt();
        scaled.dc_ratio_error_walk = self.dc_ratio_error_walk * factor.sqrt();
        scaled.material.eddy_corner_frequency = self.material.eddy_corner_frequency * factor;
        // eps(f) must stay tied to physical frequency: a drive moved to
        // factor*f keeps its error.
        scaled.injected_ratio_error.eps_e = self.injected_ratio_error.eps_e / factor;
        scaled.sample_rate = self.sample_rate * factor;
        Ok(scaled)
    }
}

/// Excitation applied to the series-connected ratio windings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Drive {
    Ac {
        frequency_hz: f64,
        amplitude_a: f64,
    },
    DcSquare {
        amplitude_a: f64,
        protocol: SquareWaveProtocol,
    },
}

/// Band of interest; drives above this are outside the model's remit.
pub const MAX_DRIVE_FREQUENCY_HZ: f64 = 300.0;

fn validate_drive(cfg: &ComparatorConfig, drive: &Drive, sample_rate: f64) -> Result<()> {
    match drive {
        Drive::Ac {
            frequency_hz,
            amplitude_a,
        } => {
            if !(*amplitude_a > 0.0) {
                return Err(Error::validation("drive amplitude must be positive"));
            }
            if !(*frequency_hz > 0.0) || *frequency_hz > MAX_DRIVE_FREQUENCY_HZ {
                return Err(Error::validation(format!(
                    "drive frequency {frequency_hz} Hz outside (0, {MAX_DRIVE_FREQUENCY_HZ}]"
                )));
            }
            if sample_rate <= 2.0 * frequency_hz {
                return Err(Error::validation(format!(
                    "sample rate {sample_rate} Hz must exceed twice the drive frequency"
                )));
            }
        }
        Drive::DcSquare {
            amplitude_a,
            protocol,
        } => {
            if !(*amplitude_a > 0.0) {
                return Err(Error::validation("drive amplitude must be positive"));
            }
            protocol.validate()?;
        }
    }
    let _ = cfg;
    Ok(())
}

/// splitmix64-style mixing for per-cell seed derivation.
fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut z = master;
    for &p in parts {
        z ^= p.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random-walk state of the injected ratio error, shared across the
/// windows of one run so drift accumulates physically.
struct ErrorWalk {
    value: f64,
    step_sigma: f64,
    rng: ChaCha12Rng,
}

impl ErrorWalk {
    fn new(density_per_sqrt_s: f64, dt: f64, seed: u64) -> Self {
        Self {
            value: 0.0,
            step_sigma: density_per_sqrt_s * dt.sqrt(),
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    fn advance(&mut self) -> f64 {
        if self.step_sigma > 0.0 {
            self.value += self.step_sigma * gauss(&mut self.rng);
        }
        self.value
    }
}

/// Noise-free residual field at the sensor for consecutive samples,
/// advancing the drift walk. `t0` keeps the drive phase continuous
/// across chained windows.
fn true_field_window(
    cfg: &ComparatorConfig,
    drive: &Drive,
    fs: f64,
    t0: f64,
    n: usize,
    walk: &mut ErrorWalk,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    match drive {
        Drive::Ac {
            frequency_hz,
            amplitude_a,
        } => {
            let k = cfg.effective_coefficient(*frequency_hz)?;
            let eps0 = cfg.injected_ratio_error.at(*frequency_hz);
            let w = std::f64::consts::TAU * frequency_hz;
            for i in 0..n {
                let t = t0 + i as f64 / fs;
                let eps = eps0 + walk.advance();
                out.push(cfg.offset_field_t + k * amplitude_a * eps * (w * t).sin());
            }
        }
        Drive::DcSquare {
            amplitude_a,
            protocol,
        } => {
            let k = cfg.effective_coefficient(0.0)?;
            for i in 0..n {
                let t = t0 + i as f64 / fs;
                let eps = cfg.dc_ratio_error + walk.advance();
                let on = t.rem_euclid(protocol.period()) < protocol.half_period;
                let level = if on { k * amplitude_a * eps } else { 0.0 };
                out.push(cfg.offset_field_t + level);
            }
        }
    }
    Ok(out)
}

/// Pass a true-field record through the sensor: either the idealized
/// transducer plus additive noise, or the closed FM tracking loop.
fn through_sensor(
    cfg: &ComparatorConfig,
    true_field: TimeSeries,
    noise: &NoiseModel,
    seed: u64,
) -> Result<TimeSeries> {
    if cfg.use_tracker {
        let tracked = track_field(&true_field, &cfg.sensor, &cfg.tracker, noise, seed)?;
        if tracked.lock_lost {
            return Err(Error::LockLoss("field slew exceeded the capture range".into()));
        }
        if tracked.nonlinear_region {
            return Err(Error::LockLoss(
                "field entered the near-zero nonlinear region".into(),
            ));
        }
        Ok(tracked.estimate)
    } else {
        let mut series = true_field;
        if !noise.is_quiet() {
            let noise_series = synthesize_noise(noise, series.sample_rate(), series.duration(), seed)?;
            series.add(&noise_series)?;
        }
        Ok(series)
    }
}

/// Drift density matching the drive's error parameter.
fn walk_density(cfg: &ComparatorConfig, drive: &Drive) -> f64 {
    match drive {
        Drive::Ac { .. } => cfg.ratio_error_walk,
        Drive::DcSquare { .. } => cfg.dc_ratio_error_walk,
    }
}

/// Simulate one measurement record of `duration` seconds.
pub fn simulate_measurement(
    cfg: &ComparatorConfig,
    drive: &Drive,
    duration: f64,
) -> Result<TimeSeries> {
    cfg.validate()?;
    validate_drive(cfg, drive, cfg.sample_rate)?;
    let fs = cfg.sample_rate;
    let n = (duration * fs).round() as usize;
    if n < 2 {
        return Err(Error::validation("duration too short at this sample rate"));
    }
    let mut walk = ErrorWalk::new(
        walk_density(cfg, drive),
        1.0 / fs,
        derive_seed(cfg.seed, &[0xD21F]),
    );
    let field = true_field_window(cfg, drive, fs, 0.0, n, &mut walk)?;
    through_sensor(
        cfg,
        TimeSeries::new(fs, 0.0, field)?,
        &cfg.noise,
        derive_seed(cfg.seed, &[0x401]),
    )
}

/// One grid point of the AC campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcCell {
    pub frequency_hz: f64,
    pub amplitude_a: f64,
    pub repeats: u32,
    /// Mean extracted flux amplitude at the excitation bin, T.
    pub mean_flux_t: f64,
    /// Standard error of that mean, T.
    pub se_flux_t: f64,
    pub mean_current_diff_a: f64,
    pub se_current_diff_a: f64,
    /// mean_current_diff / amplitude, A/A.
    pub ratio_error: f64,
    /// Failure recorded instead of aborting the campaign.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityFit {
    pub frequency_hz: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyFit {
    pub amplitude_a: f64,
    pub fit: FitResult,
}

/// Plot-ready amplitude spectrum of a representative window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumData {
    pub frequency_hz: Vec<f64>,
    pub amplitude_t: Vec<f64>,
    pub amplitude_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcCampaignResult {
    pub window_s: f64,
    pub cells: Vec<AcCell>,
    /// Current difference vs amplitude, one fit per frequency.
    pub linearity_fits: Vec<LinearityFit>,
    /// Ratio error vs frequency, one fit per amplitude.
    pub frequency_fits: Vec<FrequencyFit>,
    pub spectrum: Option<SpectrumData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllanCampaignResult {
    pub drive: Drive,
    pub window_s: f64,
    /// Time-compression factor applied to the run; taus are reported in
    /// equivalent uncompressed seconds.
    pub time_scale: f64,
    pub curve: AllanCurve,
    /// Curve re-expressed as equivalent current difference, A.
    pub sigma_current_a: Vec<f64>,
    pub min_tau_s: f64,
    pub min_sigma_t: f64,
    pub min_sigma_a: f64,
    pub slopes: Vec<DecadeSlope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcCampaignResult {
    pub amplitude_a: f64,
    pub protocol: SquareWaveProtocol,
    pub mean_step_t: f64,
    pub se_step_t: f64,
    /// Baseline (current-off) level before re-zeroing, T.
    pub off_mean_t: f64,
    pub current_diff_a: f64,
    pub se_current_diff_a: f64,
    pub ratio_error: f64,
    pub per_cycle_t: Vec<f64>,
}

/// Serializable record of a full campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub software_version: String,
    /// RFC 3339; the only field allowed to differ between reruns.
    pub timestamp_utc: String,
    pub seed: u64,
    pub config: ComparatorConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ac: Option<AcCampaignResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub allan: Option<AllanCampaignResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dc: Option<DcCampaignResult>,
    pub warnings: Vec<String>,
}

impl CampaignReport {
    fn new(cfg: &ComparatorConfig) -> Self {
        Self {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_utc: chrono::Utc::now().to_rfc3339(),
            seed: cfg.seed,
            config: cfg.clone(),
            ac: None,
            allan: None,
            dc: None,
            warnings: Vec::new(),
        }
    }

    /// Equality ignoring the timestamp, for determinism checks.
    pub fn same_results(&self, other: &CampaignReport) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.timestamp_utc = String::new();
        b.timestamp_utc = String::new();
        a == b
    }
}

/// AC campaign controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcCampaignOptions {
    /// Extraction window, s.
    pub window_s: f64,
    /// Windows averaged per grid point.
    pub repeats: u32,
}

impl Default for AcCampaignOptions {
    fn default() -> Self {
        Self {
            window_s: 1.0,
            repeats: 100,
        }
    }
}

/// Sweep frequencies x amplitudes: extract the excitation-bin amplitude
/// per window, average over repeats, convert through the coefficient,
/// and fit linearity (per frequency) and the frequency response (per
/// amplitude).
pub fn run_ac_campaign(
    cfg: &ComparatorConfig,
    frequencies: &[f64],
    amplitudes: &[f64],
    opts: &AcCampaignOptions,
) -> Result<CampaignReport> {
    cfg.validate()?;
    if frequencies.is_empty() || amplitudes.is_empty() {
        return Err(Error::validation("empty sweep"));
    }
    if opts.repeats == 0 || !(opts.window_s > 0.0) {
        return Err(Error::validation("need positive window and repeats"));
    }
    let fs = cfg.sample_rate;
    let n_window = (opts.window_s * fs).round() as usize;
    let mut report = CampaignReport::new(cfg);
    let mut spectrum = None;

    for (fi, &f0) in frequencies.iter().enumerate() {
        if cfg.injected_ratio_error.at(f0) < 0.0 {
            report
                .warnings
                .push(format!("injected ratio error is negative at {f0} Hz"));
        }
        for (ai, &amp) in amplitudes.iter().enumerate() {
            let drive = Drive::Ac {
                frequency_hz: f0,
                amplitude_a: amp,
            };
            let cell = match run_ac_cell(cfg, &drive, fs, n_window, opts, fi, ai, &mut spectrum) {
                Ok(cell) => cell,
                Err(e) => AcCell {
                    frequency_hz: f0,
                    amplitude_a: amp,
                    repeats: opts.repeats,
                    mean_flux_t: f64::NAN,
                    se_flux_t: f64::NAN,
                    mean_current_diff_a: f64::NAN,
                    se_current_diff_a: f64::NAN,
                    ratio_error: f64::NAN,
                    error: Some(e.to_string()),
                },
            };
            report.warnings.extend(
                cell.error
                    .iter()
                    .map(|e| format!("cell ({f0} Hz, {amp} A): {e}")),
            );
            let mut cells = report.ac.take().map(|r| r.cells).unwrap_or_default();
            cells.push(cell);
            report.ac = Some(AcCampaignResult {
                window_s: opts.window_s,
                cells,
                linearity_fits: Vec::new(),
                frequency_fits: Vec::new(),
                spectrum: None,
            });
        }
    }

    let mut ac = report.ac.take().expect("at least one cell");
    ac.spectrum = spectrum;

    // Linearity per frequency (needs >= 2 amplitudes).
    if amplitudes.len() >= 2 {
        for &f0 in frequencies {
            let pts: Vec<(f64, f64)> = ac
                .cells
                .iter()
                .filter(|c| c.frequency_hz == f0 && c.error.is_none())
                .map(|c| (c.amplitude_a, c.mean_current_diff_a))
                .collect();
            if pts.len() >= 2 {
                if let Ok(fit) = fit_line(&pts) {
                    ac.linearity_fits.push(LinearityFit {
                        frequency_hz: f0,
                        fit,
                    });
                }
            }
        }
    }

    // Frequency response per amplitude (needs >= 3 frequencies).
    if frequencies.len() >= 3 {
        for &amp in amplitudes {
            let pts: Vec<(f64, f64)> = ac
                .cells
                .iter()
                .filter(|c| c.amplitude_a == amp && c.error.is_none())
                .map(|c| (c.frequency_hz, c.ratio_error))
                .collect();
            if pts.len() >= 3 {
                match fit_frequency_response(&pts, ResponseModel::RatioErrorAffine) {
                    Ok(fit) => ac.frequency_fits.push(FrequencyFit {
                        amplitude_a: amp,
                        fit,
                    }),
                    Err(e) => report
                        .warnings
                        .push(format!("frequency fit at {amp} A: {e}")),
                }
            }
        }
    }

    report.ac = Some(ac);
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_ac_cell(
    cfg: &ComparatorConfig,
    drive: &Drive,
    fs: f64,
    n_window: usize,
    opts: &AcCampaignOptions,
    fi: usize,
    ai: usize,
    spectrum: &mut Option<SpectrumData>,
) -> Result<AcCell> {
    let Drive::Ac {
        frequency_hz: f0,
        amplitude_a: amp,
    } = *drive
    else {
        unreachable!("AC cell always gets an AC drive");
    };
    validate_drive(cfg, drive, fs)?;
    let k_eff = cfg.effective_coefficient(f0)?;
    let mut walk = ErrorWalk::new(
        cfg.ratio_error_walk,
        1.0 / fs,
        derive_seed(cfg.seed, &[2, fi as u64, ai as u64]),
    );
    let mut amplitudes_t = Vec::with_capacity(opts.repeats as usize);
    for rep in 0..opts.repeats {
        let t0 = rep as f64 * n_window as f64 / fs;
        let field = true_field_window(cfg, drive, fs, t0, n_window, &mut walk)?;
        let window = through_sensor(
            cfg,
            TimeSeries::new(fs, t0, field)?,
            &cfg.noise,
            derive_seed(cfg.seed, &[3, fi as u64, ai as u64, rep as u64]),
        )?;
        if rep == 0 && fi == 0 && ai == 0 {
            let spec = amplitude_spectrum(&window)?;
            *spectrum = Some(SpectrumData {
                amplitude_a: spec.amplitudes.iter().map(|a| a / k_eff).collect(),
                frequency_hz: spec.frequencies,
                amplitude_t: spec.amplitudes,
            });
        }
        amplitudes_t.push(dft_bin_amplitude(&window, f0)?);
    }
    let n = amplitudes_t.len() as f64;
    let mean_flux = amplitudes_t.iter().sum::<f64>() / n;
    let se_flux = if amplitudes_t.len() > 1 {
        let var = amplitudes_t
            .iter()
            .map(|a| (a - mean_flux).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(AcCell {
        frequency_hz: f0,
        amplitude_a: amp,
        repeats: opts.repeats,
        mean_flux_t: mean_flux,
        se_flux_t: se_flux,
        mean_current_diff_a: mean_flux / k_eff,
        se_current_diff_a: se_flux / k_eff,
        ratio_error: mean_flux / k_eff / amp,
        error: None,
    })
}

/// Allan campaign controls. Durations, taus, and the window are given in
/// uncompressed (physical) seconds; `time_scale` > 1 runs the same
/// statistics on a compressed clock with the noise knees scaled to
/// match, which leaves the Allan curve invariant with tau mapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllanCampaignOptions {
    pub total_duration: f64,
    /// Averaging times, uncompressed s; empty selects a log-spaced grid.
    pub taus: Vec<f64>,
    /// AC demodulation window, uncompressed s (ignored for DC drives).
    pub window_s: f64,
    pub time_scale: f64,
    /// Simulation rate in the compressed domain; default the config's.
    pub sample_rate: Option<f64>,
}

impl Default for AllanCampaignOptions {
    fn default() -> Self {
        Self {
            total_duration: 2400.0,
            taus: Vec::new(),
            window_s: 1.0,
            time_scale: 1.0,
            sample_rate: None,
        }
    }
}

/// One long run under `drive`; the per-window (AC) or per-cycle (DC)
/// extracted difference sequence feeds the overlapping Allan estimator.
pub fn run_allan_campaign(
    cfg: &ComparatorConfig,
    drive: &Drive,
    opts: &AllanCampaignOptions,
) -> Result<CampaignReport> {
    cfg.validate()?;
    let c = opts.time_scale;
    if !(c >= 1.0) {
        return Err(Error::validation("time_scale must be >= 1"));
    }
    if !(opts.total_duration > 0.0) {
        return Err(Error::validation("total_duration must be positive"));
    }

    // Physical-drive validation happens before any rescaling.
    validate_drive(cfg, drive, cfg.sample_rate)?;

    // Compressed-domain view: every frequency in the config and drive
    // scales by c, so spectra keep their shape relative to the
    // excitation and the statistics map exactly.
    let mut scaled_cfg = cfg.time_scaled(c)?;
    if let Some(fs) = opts.sample_rate {
        scaled_cfg.sample_rate = fs;
    }
    let fs = scaled_cfg.sample_rate;

    let (sequence, seq_dt_scaled, k_eff) = match drive {
        Drive::Ac {
            frequency_hz,
            amplitude_a,
        } => {
            let f_scaled = frequency_hz * c;
            if fs <= 2.0 * f_scaled {
                return Err(Error::validation(format!(
                    "sample rate {fs} Hz cannot carry the compressed excitation {f_scaled} Hz"
                )));
            }
            let drive_scaled = Drive::Ac {
                frequency_hz: f_scaled,
                amplitude_a: *amplitude_a,
            };
            let window_scaled = opts.window_s / c;
            let n_window = (window_scaled * fs).round() as usize;
            if n_window < 2 {
                return Err(Error::validation(
                    "window too short at this sample rate and compression",
                ));
            }
            let windows = (opts.total_duration / opts.window_s).floor() as usize;
            if windows < 9 {
                return Err(Error::validation(
                    "total_duration must cover at least 9 windows",
                ));
            }
            let run = simulate_long_run(&scaled_cfg, &drive_scaled, n_window * windows)?;
            let mut seq = Vec::with_capacity(windows);
            for w in 0..windows {
                let window = run.window(w * n_window, n_window)?;
                seq.push(dft_bin_amplitude(&window, f_scaled)?);
            }
            // The scaled eddy corner makes K at the scaled frequency
            // equal the physical K(f0).
            let k = scaled_cfg.effective_coefficient(f_scaled)?;
            (seq, n_window as f64 / fs, k)
        }
        Drive::DcSquare {
            amplitude_a,
            protocol,
        } => {
            let proto_scaled = SquareWaveProtocol {
                half_period: protocol.half_period / c,
                transient_exclusion: protocol.transient_exclusion / c,
                cycles: (opts.total_duration / (2.0 * protocol.half_period)).floor() as u32,
            };
            proto_scaled.validate()?;
            let drive_scaled = Drive::DcSquare {
                amplitude_a: *amplitude_a,
                protocol: proto_scaled,
            };
            let n = (proto_scaled.total_duration() * fs).round() as usize;
            let run = simulate_long_run(&scaled_cfg, &drive_scaled, n)?;
            let extraction = square_wave_extract(&run, &proto_scaled)?;
            (
                extraction.per_cycle,
                proto_scaled.period(),
                scaled_cfg.effective_coefficient(0.0)?,
            )
        }
    };

    let seq_series = TimeSeries::new(1.0 / seq_dt_scaled, 0.0, sequence)?;
    let seq_duration_scaled = seq_series.duration();
    let taus_scaled: Vec<f64> = if opts.taus.is_empty() {
        log_tau_grid(seq_dt_scaled, seq_duration_scaled / 3.0)
    } else {
        opts.taus.iter().map(|t| t / c).collect()
    };
    let mut curve = allan_deviation(&seq_series, &taus_scaled)?;
    // Report in uncompressed seconds.
    for t in curve.taus.iter_mut() {
        *t *= c;
    }
    for t in curve.skipped_taus.iter_mut() {
        *t *= c;
    }
    let slopes = noise_slope_id(&curve).unwrap_or_default();
    let (min_tau, min_sigma) = curve
        .min_point()
        .ok_or_else(|| Error::validation("empty Allan curve"))?;
    let sigma_current: Vec<f64> = curve.sigmas.iter().map(|s| s / k_eff).collect();

    let mut report = CampaignReport::new(cfg);
    report.allan = Some(AllanCampaignResult {
        drive: drive.clone(),
        window_s: opts.window_s,
        time_scale: c,
        min_sigma_a: min_sigma / k_eff,
        sigma_current_a: sigma_current,
        curve,
        min_tau_s: min_tau,
        min_sigma_t: min_sigma,
        slopes,
    });
    Ok(report)
}

/// Continuous noise over the whole record (one synthesis) so slow noise
/// terms keep their correlation structure across windows and cycles.
fn simulate_long_run(cfg: &ComparatorConfig, drive: &Drive, n: usize) -> Result<TimeSeries> {
    let fs = cfg.sample_rate;
    let mut walk = ErrorWalk::new(
        walk_density(cfg, drive),
        1.0 / fs,
        derive_seed(cfg.seed, &[0xD21F]),
    );
    let field = true_field_window(cfg, drive, fs, 0.0, n, &mut walk)?;
    through_sensor(
        cfg,
        TimeSeries::new(fs, 0.0, field)?,
        &cfg.noise,
        derive_seed(cfg.seed, &[0x401]),
    )
}

fn log_tau_grid(tau_min: f64, tau_max: f64) -> Vec<f64> {
    let per_decade = 6.0;
    let mut taus = Vec::new();
    let mut k = (tau_min.log10() * per_decade).ceil() as i64;
    loop {
        let tau = 10f64.powf(k as f64 / per_decade);
        if tau > tau_max {
            break;
        }
        taus.push(tau);
        k += 1;
    }
    taus
}

/// Square-wave DC run: extract the mean flux step and convert through
/// the DC coefficient.
pub fn run_dc_campaign(
    cfg: &ComparatorConfig,
    current_a: f64,
    proto: &SquareWaveProtocol,
) -> Result<CampaignReport> {
    cfg.validate()?;
    let drive = Drive::DcSquare {
        amplitude_a: current_a,
        protocol: *proto,
    };
    validate_drive(cfg, &drive, cfg.sample_rate)?;
    let n = (proto.total_duration() * cfg.sample_rate).round() as usize;
    let run = simulate_long_run(cfg, &drive, n)?;
    let extraction = square_wave_extract(&run, proto)?;
    let k0 = cfg.effective_coefficient(0.0)?;
    let mut report = CampaignReport::new(cfg);
    report.dc = Some(DcCampaignResult {
        amplitude_a: current_a,
        protocol: *proto,
        mean_step_t: extraction.mean_step,
        se_step_t: extraction.standard_error,
        off_mean_t: extraction.off_mean,
        current_diff_a: extraction.mean_step / k0,
        se_current_diff_a: extraction.standard_error / k0,
        ratio_error: extraction.mean_step / k0 / current_a,
        per_cycle_t: extraction.per_cycle,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_config() -> ComparatorConfig {
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.noise = NoiseModel::quiet();
        cfg.ratio_error_walk = 0.0;
        cfg.dc_ratio_error_walk = 0.0;
        cfg
    }

    #[test]
    fn paper_defaults_validate() {
        let cfg = ComparatorConfig::paper_defaults();
        cfg.validate().unwrap();
        assert!((cfg.injected_ratio_error.at(67.0) - 76e-6).abs() < 1e-18);
    }

    #[test]
    fn flicker_knee_places_dc_band_at_sqrt_40() {
        // Density ratio between the deep sub-hertz band (0.05 Hz
        // reference) and 67 Hz is sqrt(40), the DC averaging-time
        // penalty.
        let cfg = ComparatorConfig::paper_defaults();
        let ratio = cfg.noise.asd(0.05) / cfg.noise.asd(67.0);
        assert!((ratio / 40f64.sqrt() - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn noiseless_ac_run_is_clean_sine_over_offset() {
        let cfg = quiet_config();
        let drive = Drive::Ac {
            frequency_hz: 67.0,
            amplitude_a: 1.0,
        };
        let ts = simulate_measurement(&cfg, &drive, 1.0).unwrap();
        let a = dft_bin_amplitude(&ts, 67.0).unwrap();
        let expect = cfg.effective_coefficient(67.0).unwrap() * 76e-6;
        assert!((a / expect - 1.0).abs() < 1e-9, "{a:e} vs {expect:e}");
        assert!((ts.mean() - cfg.offset_field_t).abs() < 1e-15);
    }

    #[test]
    fn zero_error_zero_noise_is_flat_offset() {
        let mut cfg = quiet_config();
        cfg.injected_ratio_error = RatioError {
            eps_h: 0.0,
            eps_e: 0.0,
        };
        let drive = Drive::Ac {
            frequency_hz: 67.0,
            amplitude_a: 1.0,
        };
        let ts = simulate_measurement(&cfg, &drive, 0.5).unwrap();
        assert!(ts
            .samples()
            .iter()
            .all(|&b| (b - cfg.offset_field_t).abs() < 1e-18));
    }

    #[test]
    fn noiseless_dc_square_is_95_pt() {
        let cfg = quiet_config();
        let proto = SquareWaveProtocol::new(1.0, 0.5, 4).unwrap();
        let drive = Drive::DcSquare {
            amplitude_a: 1.0,
            protocol: proto,
        };
        let ts = simulate_measurement(&cfg, &drive, proto.total_duration()).unwrap();
        let ex = square_wave_extract(&ts, &proto).unwrap();
        // K(0) * 150 nA = 94.2 pT, inside 2% of the quoted 95 pT.
        assert!((ex.mean_step / 95e-12 - 1.0).abs() < 0.02, "{:e}", ex.mean_step);
    }

    #[test]
    fn pipeline_recovers_injected_error_without_noise() {
        let cfg = quiet_config();
        let opts = AcCampaignOptions {
            window_s: 1.0,
            repeats: 3,
        };
        let report = run_ac_campaign(&cfg, &[67.0], &[1.0], &opts).unwrap();
        let cell = &report.ac.as_ref().unwrap().cells[0];
        assert!(
            (cell.ratio_error / 76e-6 - 1.0).abs() < 1e-6,
            "{:e}",
            cell.ratio_error
        );
    }

    #[test]
    fn determinism_same_seed_same_report() {
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.sample_rate = 2010.0;
        let opts = AcCampaignOptions {
            window_s: 1.0,
            repeats: 5,
        };
        let a = run_ac_campaign(&cfg, &[67.0], &[1.0], &opts).unwrap();
        let b = run_ac_campaign(&cfg, &[67.0], &[1.0], &opts).unwrap();
        assert!(a.same_results(&b));
        let mut cfg2 = cfg.clone();
        cfg2.seed = 2;
        let c = run_ac_campaign(&cfg2, &[67.0], &[1.0], &opts).unwrap();
        assert!(!a.same_results(&c));
    }

    #[test]
    fn scale_covariance_of_extraction() {
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.sample_rate = 2010.0;
        cfg.noise.line_spurs.clear();
        let opts = AcCampaignOptions {
            window_s: 1.0,
            repeats: 20,
        };
        let report = run_ac_campaign(&cfg, &[67.0], &[0.5, 1.0], &opts).unwrap();
        let cells = &report.ac.as_ref().unwrap().cells;
        let ratio = cells[1].mean_current_diff_a / cells[0].mean_current_diff_a;
        // Doubling the drive doubles the difference within noise.
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn ac_campaign_flags_negative_error() {
        let mut cfg = quiet_config();
        cfg.injected_ratio_error = RatioError {
            eps_h: -1e-5,
            eps_e: 0.0,
        };
        let opts = AcCampaignOptions {
            window_s: 0.5,
            repeats: 1,
        };
        let report = run_ac_campaign(&cfg, &[67.0], &[1.0], &opts).unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("negative")));
    }

    #[test]
    fn drive_validation() {
        let cfg = quiet_config();
        assert!(simulate_measurement(
            &cfg,
            &Drive::Ac {
                frequency_hz: 400.0,
                amplitude_a: 1.0
            },
            1.0
        )
        .is_err());
        assert!(simulate_measurement(
            &cfg,
            &Drive::Ac {
                frequency_hz: 67.0,
                amplitude_a: 0.0
            },
            1.0
        )
        .is_err());
    }

    #[test]
    fn tracked_mode_recovers_dc_step_through_loop() {
        let mut cfg = quiet_config();
        cfg.use_tracker = true;
        cfg.sensor.linewidth_fwhm = 1.0e5;
        cfg.tracker.fm_deviation = 1.0e4;
        cfg.sample_rate = 10_000.0;
        // Transient exclusion comfortably swallows the loop settling.
        let proto = SquareWaveProtocol::new(0.5, 0.25, 4).unwrap();
        let drive = Drive::DcSquare {
            amplitude_a: 1.0,
            protocol: proto,
        };
        let ts = simulate_measurement(&cfg, &drive, proto.total_duration()).unwrap();
        let ex = square_wave_extract(&ts, &proto).unwrap();
        assert!(
            (ex.mean_step / 94.2e-12 - 1.0).abs() < 0.01,
            "step {:e}",
            ex.mean_step
        );
    }

    #[test]
    fn allan_campaign_noiseless_is_zero() {
        let cfg = quiet_config();
        let drive = Drive::Ac {
            frequency_hz: 67.0,
            amplitude_a: 1.0,
        };
        let opts = AllanCampaignOptions {
            total_duration: 60.0,
            taus: vec![1.0, 2.0, 5.0, 10.0],
            window_s: 1.0,
            time_scale: 1.0,
            sample_rate: Some(670.0),
        };
        let report = run_allan_campaign(&cfg, &drive, &opts).unwrap();
        let allan = report.allan.unwrap();
        assert!(allan.curve.sigmas.iter().all(|&s| s < 1e-18));
    }

    #[test]
    fn allan_campaign_white_only_is_monotone_minus_half() {
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.noise = NoiseModel::new(300e-12, 0.0, 0.0, vec![]).unwrap();
        cfg.ratio_error_walk = 0.0;
        let drive = Drive::Ac {
            frequency_hz: 67.0,
            amplitude_a: 1.0,
        };
        let opts = AllanCampaignOptions {
            total_duration: 600.0,
            taus: (0..8).map(|k| 10f64.powf(k as f64 / 4.0)).collect(),
            window_s: 1.0,
            time_scale: 1.0,
            sample_rate: Some(670.0),
        };
        let report = run_allan_campaign(&cfg, &drive, &opts).unwrap();
        let allan = report.allan.unwrap();
        // No minimum: the curve keeps falling to the last tau.
        let last = *allan.curve.sigmas.last().unwrap();
        assert_eq!(allan.min_sigma_t, last);
        for w in allan.curve.sigmas.windows(2) {
            assert!(w[1] < w[0] * 1.25, "non-monotone beyond noise: {w:?}");
        }
    }

    #[test]
    fn time_compression_leaves_allan_curve_invariant() {
        // White-dominated short-tau points have small estimator variance,
        // so compressed and uncompressed runs must land on the same curve.
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.noise.line_spurs.clear();
        cfg.ratio_error_walk = 0.0;
        let drive = Drive::Ac {
            frequency_hz: 67.0,
            amplitude_a: 1.0,
        };
        let taus = vec![1.0, 2.0, 4.0];
        let base = AllanCampaignOptions {
            total_duration: 400.0,
            taus: taus.clone(),
            window_s: 1.0,
            time_scale: 1.0,
            sample_rate: Some(2010.0),
        };
        let compressed = AllanCampaignOptions {
            time_scale: 10.0,
            sample_rate: Some(20_100.0),
            ..base.clone()
        };
        let a = run_allan_campaign(&cfg, &drive, &base).unwrap();
        let b = run_allan_campaign(&cfg, &drive, &compressed).unwrap();
        let (ca, cb) = (a.allan.unwrap(), b.allan.unwrap());
        for i in 0..taus.len() {
            assert!((ca.curve.taus[i] / cb.curve.taus[i] - 1.0).abs() < 1e-9);
            let ratio = ca.curve.sigmas[i] / cb.curve.sigmas[i];
            assert!(
                (ratio - 1.0).abs() < 0.15,
                "tau {}: {:e} vs {:e}",
                taus[i],
                ca.curve.sigmas[i],
                cb.curve.sigmas[i]
            );
        }
    }

    #[test]
    fn time_compression_rejects_tracked_mode() {
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.use_tracker = true;
        assert!(cfg.time_scaled(10.0).is_err());
    }

    #[test]
    fn dc_campaign_recovers_ratio_error() {
        let mut cfg = ComparatorConfig::paper_defaults();
        cfg.sample_rate = 1000.0;
        cfg.seed = 11;
        let proto = SquareWaveProtocol::new(1.0, 0.5, 60).unwrap();
        let report = run_dc_campaign(&cfg, 1.0, &proto).unwrap();
        let dc = report.dc.unwrap();
        assert!(
            (dc.current_diff_a - 150e-9).abs() < 5.0 * dc.se_current_diff_a.max(20e-9),
            "{:e} +/- {:e}",
            dc.current_diff_a,
            dc.se_current_diff_a
        );
        assert_eq!(dc.per_cycle_t.len(), 60);
        // Baseline sits at the offset field.
        assert!((dc.off_mean_t / cfg.offset_field_t - 1.0).abs() < 0.01);
    }

    #[test]
    fn dc_zero_current_rejected_but_zero_error_extracts_zero() {
        let mut cfg = quiet_config();
        cfg.dc_ratio_error = 0.0;
        let proto = SquareWaveProtocol::new(0.5, 0.1, 3).unwrap();
        assert!(run_dc_campaign(&cfg, 0.0, &proto).is_err());
        let report = run_dc_campaign(&cfg, 1.0, &proto).unwrap();
        assert_eq!(report.dc.unwrap().current_diff_a, 0.0);
    }

    #[test]
    fn report_round_trips_through_json() {
        let cfg = quiet_config();
        let opts = AcCampaignOptions {
            window_s: 1.0,
            repeats: 2,
        };
        let report = run_ac_campaign(&cfg, &[67.0], &[1.0], &opts).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: CampaignReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }
}
