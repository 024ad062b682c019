//! Plain-text campaign configuration. TOML sections mirror the physical
//! subsystems; unit suffixes live in the key names so values cannot
//! silently drift. Keys not listed here produce warnings, missing
//! mandatory keys are reported all at once, everything else falls back
//! to the calibrated defaults.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::magcore::{CoreGeometry, CoreMaterial, WindingConfig};
use crate::noise::{NoiseModel, Spur};
use crate::nvsensor::{SensorPhysics, TrackerConfig};
use crate::sim::{ComparatorConfig, RatioError};

/// A parsed configuration plus non-fatal findings.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ComparatorConfig,
    pub warnings: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawConfig {
    geometry: RawGeometry,
    material: RawMaterial,
    windings: RawWindings,
    ratio_error: RawRatioError,
    noise: RawNoise,
    sensor: RawSensor,
    tracker: RawTracker,
    sim: RawSim,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawGeometry {
    outer_diameter_m: Option<f64>,
    inner_diameter_m: Option<f64>,
    thickness_m: Option<f64>,
    gap_length_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawMaterial {
    relative_permeability: Option<f64>,
    eddy_corner_frequency_hz: Option<f64>,
    hysteresis_attenuation: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawWindings {
    primary_turns: Option<u32>,
    secondary_turns: Option<u32>,
    auxiliary_turns: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawRatioError {
    eps_h: Option<f64>,
    eps_e_per_hz: Option<f64>,
    dc: Option<f64>,
    walk_per_sqrt_s: Option<f64>,
    dc_walk_per_sqrt_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawSpur {
    frequency_hz: Option<f64>,
    amplitude_t: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawNoise {
    white_asd_t: Option<f64>,
    flicker_knee_hz: Option<f64>,
    random_walk_asd_t: Option<f64>,
    spurs: Option<Vec<RawSpur>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawSensor {
    zero_field_splitting_hz: Option<f64>,
    gyromagnetic_ratio_hz_per_t: Option<f64>,
    contrast: Option<f64>,
    linewidth_fwhm_hz: Option<f64>,
    photon_rate_per_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawTracker {
    fm_deviation_hz: Option<f64>,
    multiplex_period_s: Option<f64>,
    loop_gain: Option<f64>,
    loop_bandwidth_hz: Option<f64>,
    nonlinear_guard_t: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawSim {
    use_tracker: Option<bool>,
    offset_field_t: Option<f64>,
    sample_rate_hz: Option<f64>,
    seed: Option<u64>,
}

/// Keys whose values have no sensible default and must appear.
const MANDATORY_KEYS: &[&str] = &[
    "geometry.outer_diameter_m",
    "geometry.inner_diameter_m",
    "geometry.thickness_m",
    "geometry.gap_length_m",
    "windings.primary_turns",
    "windings.secondary_turns",
    "noise.white_asd_t",
    "sim.sample_rate_hz",
    "sim.seed",
];

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "geometry",
        &[
            "outer_diameter_m",
            "inner_diameter_m",
            "thickness_m",
            "gap_length_m",
        ],
    ),
    (
        "material",
        &[
            "relative_permeability",
            "eddy_corner_frequency_hz",
            "hysteresis_attenuation",
        ],
    ),
    (
        "windings",
        &["primary_turns", "secondary_turns", "auxiliary_turns"],
    ),
    (
        "ratio_error",
        &[
            "eps_h",
            "eps_e_per_hz",
            "dc",
            "walk_per_sqrt_s",
            "dc_walk_per_sqrt_s",
        ],
    ),
    (
        "noise",
        &[
            "white_asd_t",
            "flicker_knee_hz",
            "random_walk_asd_t",
            "spurs",
        ],
    ),
    (
        "sensor",
        &[
            "zero_field_splitting_hz",
            "gyromagnetic_ratio_hz_per_t",
            "contrast",
            "linewidth_fwhm_hz",
            "photon_rate_per_s",
        ],
    ),
    (
        "tracker",
        &[
            "fm_deviation_hz",
            "multiplex_period_s",
            "loop_gain",
            "loop_bandwidth_hz",
            "nonlinear_guard_t",
        ],
    ),
    (
        "sim",
        &["use_tracker", "offset_field_t", "sample_rate_hz", "seed"],
    ),
];

/// Parse and validate a comparator configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::config(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    parse_config(&text)
}

/// Parse a configuration from TOML text (see `load_config`).
pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    // toml's message carries line/column context.
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    let warnings = unknown_key_warnings(&table);
    let raw: RawConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;

    let missing = missing_mandatory(&raw);
    if !missing.is_empty() {
        return Err(Error::config(format!(
            "missing mandatory keys: {}",
            missing.join(", ")
        )));
    }

    let defaults = ComparatorConfig::paper_defaults();
    let spurs = match raw.noise.spurs {
        None => defaults.noise.line_spurs.clone(),
        Some(raw_spurs) => raw_spurs
            .into_iter()
            .enumerate()
            .map(|(i, s)| match (s.frequency_hz, s.amplitude_t) {
                (Some(f), Some(a)) => Ok(Spur {
                    frequency_hz: f,
                    amplitude_t: a,
                }),
                _ => Err(Error::config(format!(
                    "noise.spurs[{i}] needs frequency_hz and amplitude_t"
                ))),
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let config = ComparatorConfig {
        geometry: CoreGeometry {
            outer_diameter: raw.geometry.outer_diameter_m.expect("checked"),
            inner_diameter: raw.geometry.inner_diameter_m.expect("checked"),
            thickness: raw.geometry.thickness_m.expect("checked"),
            gap_length: raw.geometry.gap_length_m.expect("checked"),
        },
        material: CoreMaterial {
            relative_permeability: raw
                .material
                .relative_permeability
                .unwrap_or(defaults.material.relative_permeability),
            eddy_corner_frequency: raw
                .material
                .eddy_corner_frequency_hz
                .unwrap_or(defaults.material.eddy_corner_frequency),
            hysteresis_attenuation: raw
                .material
                .hysteresis_attenuation
                .unwrap_or(defaults.material.hysteresis_attenuation),
        },
        windings: WindingConfig {
            primary_turns: raw.windings.primary_turns.expect("checked"),
            secondary_turns: raw.windings.secondary_turns.expect("checked"),
            auxiliary_turns: raw
                .windings
                .auxiliary_turns
                .unwrap_or(defaults.windings.auxiliary_turns),
        },
        injected_ratio_error: RatioError {
            eps_h: raw
                .ratio_error
                .eps_h
                .unwrap_or(defaults.injected_ratio_error.eps_h),
            eps_e: raw
                .ratio_error
                .eps_e_per_hz
                .unwrap_or(defaults.injected_ratio_error.eps_e),
        },
        dc_ratio_error: raw.ratio_error.dc.unwrap_or(defaults.dc_ratio_error),
        ratio_error_walk: raw
            .ratio_error
            .walk_per_sqrt_s
            .unwrap_or(defaults.ratio_error_walk),
        dc_ratio_error_walk: raw
            .ratio_error
            .dc_walk_per_sqrt_s
            .unwrap_or(defaults.dc_ratio_error_walk),
        noise: NoiseModel {
            white_asd: raw.noise.white_asd_t.expect("checked"),
            flicker_knee: raw
                .noise
                .flicker_knee_hz
                .unwrap_or(defaults.noise.flicker_knee),
            random_walk_asd: raw
                .noise
                .random_walk_asd_t
                .unwrap_or(defaults.noise.random_walk_asd),
            line_spurs: spurs,
        },
        sensor: SensorPhysics {
            zero_field_splitting: raw
                .sensor
                .zero_field_splitting_hz
                .unwrap_or(defaults.sensor.zero_field_splitting),
            gyromagnetic_ratio: raw
                .sensor
                .gyromagnetic_ratio_hz_per_t
                .unwrap_or(defaults.sensor.gyromagnetic_ratio),
            contrast: raw.sensor.contrast.unwrap_or(defaults.sensor.contrast),
            linewidth_fwhm: raw
                .sensor
                .linewidth_fwhm_hz
                .unwrap_or(defaults.sensor.linewidth_fwhm),
            photon_rate: raw
                .sensor
                .photon_rate_per_s
                .unwrap_or(defaults.sensor.photon_rate),
        },
        tracker: TrackerConfig {
            fm_deviation: raw
                .tracker
                .fm_deviation_hz
                .unwrap_or(defaults.tracker.fm_deviation),
            multiplex_period: raw
                .tracker
                .multiplex_period_s
                .unwrap_or(defaults.tracker.multiplex_period),
            loop_gain: raw.tracker.loop_gain.unwrap_or(defaults.tracker.loop_gain),
            loop_bandwidth: raw
                .tracker
                .loop_bandwidth_hz
                .unwrap_or(defaults.tracker.loop_bandwidth),
            nonlinear_guard_t: raw.tracker.nonlinear_guard_t,
        },
        use_tracker: raw.sim.use_tracker.unwrap_or(defaults.use_tracker),
        offset_field_t: raw.sim.offset_field_t.unwrap_or(defaults.offset_field_t),
        sample_rate: raw.sim.sample_rate_hz.expect("checked"),
        seed: raw.sim.seed.expect("checked"),
    };

    config
        .validate()
        .map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
    Ok(LoadedConfig { config, warnings })
}

fn missing_mandatory(raw: &RawConfig) -> Vec<&'static str> {
    let mut missing = Vec::new();
    let checks: [(&'static str, bool); 9] = [
        (
            "geometry.outer_diameter_m",
            raw.geometry.outer_diameter_m.is_some(),
        ),
        (
            "geometry.inner_diameter_m",
            raw.geometry.inner_diameter_m.is_some(),
        ),
        ("geometry.thickness_m", raw.geometry.thickness_m.is_some()),
        ("geometry.gap_length_m", raw.geometry.gap_length_m.is_some()),
        (
            "windings.primary_turns",
            raw.windings.primary_turns.is_some(),
        ),
        (
            "windings.secondary_turns",
            raw.windings.secondary_turns.is_some(),
        ),
        ("noise.white_asd_t", raw.noise.white_asd_t.is_some()),
        ("sim.sample_rate_hz", raw.sim.sample_rate_hz.is_some()),
        ("sim.seed", raw.sim.seed.is_some()),
    ];
    for (key, present) in checks {
        if !present {
            missing.push(key);
        }
    }
    debug_assert_eq!(MANDATORY_KEYS.len(), checks.len());
    missing
}

fn unknown_key_warnings(table: &toml::Table) -> Vec<String> {
    let mut warnings = Vec::new();
    for (section, value) in table {
        let Some((_, known)) = KNOWN_KEYS.iter().find(|(s, _)| s == section) else {
            warnings.push(format!("unknown section [{section}] ignored"));
            continue;
        };
        if let toml::Value::Table(entries) = value {
            for key in entries.keys() {
                if !known.contains(&key.as_str()) {
                    warnings.push(format!("unknown key {section}.{key} ignored"));
                }
            }
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_round_trip() {
        let text = include_str!("../../../configs/paper-defaults.toml");
        let loaded = parse_config(text).unwrap();
        assert!(loaded.warnings.is_empty(), "{:?}", loaded.warnings);
        assert_eq!(loaded.config, ComparatorConfig::paper_defaults());
        // The headline numbers of that configuration.
        let cfg = &loaded.config;
        assert_eq!(cfg.geometry.outer_diameter, 0.10);
        assert_eq!(cfg.geometry.gap_length, 0.02);
        assert_eq!(cfg.windings.primary_turns, 10);
        assert!((cfg.injected_ratio_error.at(67.0) - 76e-6).abs() < 1e-18);
    }

    #[test]
    fn empty_file_lists_every_mandatory_key() {
        let err = parse_config("").unwrap_err();
        let msg = err.to_string();
        for key in MANDATORY_KEYS {
            assert!(msg.contains(key), "missing {key} in: {msg}");
        }
    }

    #[test]
    fn zero_gap_hits_geometry_invariant() {
        let text = include_str!("../../../configs/paper-defaults.toml")
            .replace("gap_length_m = 0.02", "gap_length_m = 0.0");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("gap_length"), "{err}");
    }

    #[test]
    fn unknown_keys_warn_but_parse() {
        let text = format!(
            "{}\n[extras]\nfoo = 1\n",
            include_str!("../../../configs/paper-defaults.toml")
        );
        let loaded = parse_config(&text).unwrap();
        assert!(loaded.warnings.iter().any(|w| w.contains("extras")));
    }

    #[test]
    fn parse_error_carries_location() {
        let err = parse_config("geometry = {").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn defaults_fill_optional_sections() {
        let minimal = r#"
[geometry]
outer_diameter_m = 0.10
inner_diameter_m = 0.06
thickness_m = 0.02
gap_length_m = 0.02

[windings]
primary_turns = 10
secondary_turns = 10

[noise]
white_asd_t = 300e-12

[sim]
sample_rate_hz = 1e4
seed = 1
"#;
        let loaded = parse_config(minimal).unwrap();
        let defaults = ComparatorConfig::paper_defaults();
        assert_eq!(loaded.config.material, defaults.material);
        assert_eq!(loaded.config.sensor, defaults.sensor);
        assert_eq!(loaded.config.noise.flicker_knee, defaults.noise.flicker_knee);
    }
}
