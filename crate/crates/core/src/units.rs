//! Fixed unit system: energies and frequencies in wavenumbers (cm⁻¹), times in
//! femtoseconds, temperatures in kelvin.
//!
//! Frequencies are carried as the energy ħω, so a phase ωt is written
//! `x * t / HBAR_CM_FS` with `x` in cm⁻¹ and `t` in fs.

use crate::error::{Error, Result};

/// Speed of light in cm/fs (exact, SI definition).
const SPEED_OF_LIGHT_CM_PER_FS: f64 = 2.997_924_58e-5;

/// ħ in cm⁻¹·fs, i.e. 1 / (2π c).
pub const HBAR_CM_FS: f64 = 1.0 / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_CM_PER_FS);

/// Boltzmann constant in cm⁻¹/K (CODATA 2018, k / hc).
pub const KB_CM_K: f64 = 0.695_034_800_486_86;

/// Below this argument `thermal_coth` switches to its Laurent series.
pub const COTH_SERIES_THRESHOLD: f64 = 1e-3;

/// The unit system is a set of constants; this type exists so the constants
/// can be echoed into run metadata.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct UnitSystem {
    pub energy: &'static str,
    pub time: &'static str,
    pub temperature: &'static str,
    pub hbar_cmfs: f64,
    pub kb_cmk: f64,
}

pub const UNITS: UnitSystem = UnitSystem {
    energy: "cm^-1",
    time: "fs",
    temperature: "K",
    hbar_cmfs: HBAR_CM_FS,
    kb_cmk: KB_CM_K,
};

/// coth(x) for x > 0, using 1/x + x/3 − x³/45 for small x.
pub fn thermal_coth(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("thermal_coth requires x > 0, got {x}")));
    }
    Ok(coth_unchecked(x))
}

/// Same as [`thermal_coth`] without the domain check; callers guarantee x > 0.
#[inline]
pub(crate) fn coth_unchecked(x: f64) -> f64 {
    if x < COTH_SERIES_THRESHOLD {
        let x2 = x * x;
        1.0 / x + x / 3.0 - x * x2 / 45.0
    } else if x > 20.0 {
        // e^{-2x} < 5e-18: tanh has saturated
        1.0 + 2.0 * (-2.0 * x).exp()
    } else {
        1.0 / x.tanh()
    }
}

/// β = 1/(k_B T) in 1/cm⁻¹.
pub fn beta_from_temperature(temperature_k: f64) -> Result<f64> {
    if !(temperature_k > 0.0) || !temperature_k.is_finite() {
        return Err(Error::Domain(format!(
            "temperature must be positive and finite, got {temperature_k} K"
        )));
    }
    Ok(1.0 / (KB_CM_K * temperature_k))
}
