//! Magnetic equivalent circuit of the air-gapped toroidal core.
//!
//! The core is reduced to two series reluctances, the air gap and the
//! permalloy path. Fringing at the gap is ignored; the gap field is a
//! uniform prism of the core cross-section. Losses enter as a first-order
//! eddy-current roll-off times a frequency-flat hysteresis attenuation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permeability in H/m.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Toroid dimensions. All lengths in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreGeometry {
    pub outer_diameter: f64,
    pub inner_diameter: f64,
    pub thickness: f64,
    pub gap_length: f64,
}

impl CoreGeometry {
    pub fn new(
        outer_diameter: f64,
        inner_diameter: f64,
        thickness: f64,
        gap_length: f64,
    ) -> Result<Self> {
        let g = Self {
            outer_diameter,
            inner_diameter,
            thickness,
            gap_length,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_diameter > 0.0 && self.outer_diameter > self.inner_diameter) {
            return Err(Error::validation(format!(
                "need outer_diameter > inner_diameter > 0, got {} / {}",
                self.outer_diameter, self.inner_diameter
            )));
        }
        if !(self.thickness > 0.0) {
            return Err(Error::validation(format!(
                "thickness must be > 0, got {}",
                self.thickness
            )));
        }
        let circumference = std::f64::consts::PI * (self.outer_diameter + self.inner_diameter) / 2.0;
        if !(self.gap_length > 0.0 && self.gap_length < circumference) {
            return Err(Error::validation(format!(
                "gap_length must lie in (0, {circumference:.4}), got {}",
                self.gap_length
            )));
        }
        // Derived quantities must come out positive too.
        if !(self.cross_section() > 0.0) || !(self.magnetic_path() > 0.0) {
            return Err(Error::validation("non-physical derived geometry"));
        }
        Ok(())
    }

    /// Core cross-section A = ((outer - inner)/2) * thickness, in m^2.
    pub fn cross_section(&self) -> f64 {
        (self.outer_diameter - self.inner_diameter) / 2.0 * self.thickness
    }

    /// Magnetic path length l_m = pi*(outer+inner)/2 - gap, in m.
    pub fn magnetic_path(&self) -> f64 {
        std::f64::consts::PI * (self.outer_diameter + self.inner_diameter) / 2.0 - self.gap_length
    }

    /// Same toroid with a different gap length (path length recomputed).
    pub fn with_gap(&self, gap_length: f64) -> Result<Self> {
        Self::new(
            self.outer_diameter,
            self.inner_diameter,
            self.thickness,
            gap_length,
        )
    }
}

/// Core material: permeability plus the two-parameter loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreMaterial {
    /// Relative permeability mu_r.
    pub relative_permeability: f64,
    /// Corner frequency of the eddy-current roll-off, Hz.
    pub eddy_corner_frequency: f64,
    /// Frequency-flat hysteresis attenuation, in [0, 1).
    pub hysteresis_attenuation: f64,
}

impl CoreMaterial {
    pub fn new(
        relative_permeability: f64,
        eddy_corner_frequency: f64,
        hysteresis_attenuation: f64,
    ) -> Result<Self> {
        let m = Self {
            relative_permeability,
            eddy_corner_frequency,
            hysteresis_attenuation,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_permeability >= 1.0) {
            return Err(Error::validation(format!(
                "relative_permeability must be >= 1, got {}",
                self.relative_permeability
            )));
        }
        if !(self.eddy_corner_frequency > 0.0) {
            return Err(Error::validation(format!(
                "eddy_corner_frequency must be > 0, got {}",
                self.eddy_corner_frequency
            )));
        }
        if !(0.0..1.0).contains(&self.hysteresis_attenuation) {
            return Err(Error::validation(format!(
                "hysteresis_attenuation must be in [0, 1), got {}",
                self.hysteresis_attenuation
            )));
        }
        Ok(())
    }
}

/// Turn counts of the ratio and auxiliary windings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindingConfig {
    pub primary_turns: u32,
    pub secondary_turns: u32,
    pub auxiliary_turns: u32,
}

impl WindingConfig {
    pub fn new(primary_turns: u32, secondary_turns: u32, auxiliary_turns: u32) -> Self {
        Self {
            primary_turns,
            secondary_turns,
            auxiliary_turns,
        }
    }

    /// One-to-one comparison requires equal ratio windings.
    pub fn is_one_to_one(&self) -> bool {
        self.primary_turns == self.secondary_turns
    }
}

/// Total series reluctance gap + core, in ampere-turns per weber.
pub fn total_reluctance(geom: &CoreGeometry, mat: &CoreMaterial) -> Result<f64> {
    geom.validate()?;
    mat.validate()?;
    let a = geom.cross_section();
    Ok(gap_reluctance(geom) + geom.magnetic_path() / (MU_0 * mat.relative_permeability * a))
}

/// Gap contribution g / (mu0 * A).
pub fn gap_reluctance(geom: &CoreGeometry) -> f64 {
    geom.gap_length / (MU_0 * geom.cross_section())
}

/// Flux density in the gap for a net ampere-turn unbalance, in tesla.
///
/// B = mu0 * NI / (g + l_m/mu_r); linear in NI, sign follows NI.
pub fn gap_flux_density(geom: &CoreGeometry, mat: &CoreMaterial, ampere_turns: f64) -> Result<f64> {
    geom.validate()?;
    mat.validate()?;
    Ok(MU_0 * ampere_turns / (geom.gap_length + geom.magnetic_path() / mat.relative_permeability))
}

/// Gap field evaluated over a list of gap lengths at fixed ampere-turns.
///
/// The magnetic path is recomputed per point. Strictly decreasing in g
/// for positive drive.
pub fn gap_sweep(
    geom: &CoreGeometry,
    mat: &CoreMaterial,
    ampere_turns: f64,
    gap_values: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if gap_values.is_empty() {
        return Err(Error::validation("gap sweep needs at least one gap value"));
    }
    gap_values
        .iter()
        .map(|&g| {
            let geom_g = geom.with_gap(g)?;
            Ok((g, gap_flux_density(&geom_g, mat, ampere_turns)?))
        })
        .collect()
}

/// Flux-transfer attenuation A(f) = (1 - h) / sqrt(1 + (f/f_e)^2).
///
/// A(0) = 1 - h exactly; monotone non-increasing in f.
pub fn transfer_attenuation(frequency: f64, mat: &CoreMaterial) -> f64 {
    let ratio = frequency / mat.eddy_corner_frequency;
    (1.0 - mat.hysteresis_attenuation) / (1.0 + ratio * ratio).sqrt()
}

/// Flux per unit current difference, K(f), in tesla per ampere.
///
/// K(f) = gap_flux_density at `turns` ampere-turns per ampere, times the
/// transfer attenuation. Multiply by 1e3 for pT/nA.
pub fn conversion_coefficient(
    geom: &CoreGeometry,
    mat: &CoreMaterial,
    turns: u32,
    frequency: f64,
) -> Result<f64> {
    if turns == 0 {
        return Err(Error::validation("conversion coefficient needs turns >= 1"));
    }
    Ok(gap_flux_density(geom, mat, turns as f64)? * transfer_attenuation(frequency, mat))
}

/// Frequency-dependent ratio error eps(f) = eps_h + eps_e * f, in A/A.
///
/// A negative result carries the lumped phase direction and is allowed;
/// reports flag it.
pub fn ratio_error_model(frequency: f64, eps_h: f64, eps_e: f64) -> f64 {
    eps_h + eps_e * frequency
}
