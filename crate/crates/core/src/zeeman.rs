//! Zeeman level structure of the cesium ground hyperfine manifold and the
//! frequency bookkeeping built on it.
//!
//! The storage process couples ground `F = 3` sublevels `n` to `F = 4`
//! sublevels `m`. In a field `B` the spin wave formed from the pair `(n, m)`
//! is shifted from the clock transition by `(n + m)·f_L`, with
//! `f_L = g·B` the Larmor frequency. The opposite sign of the `F = 4`
//! g-factor is already folded into the `(n + m)` form, so a single `g`
//! magnitude is stored.

use crate::error::{Error, Result};

/// Hyperfine quantum number of the ground (initial) manifold.
pub const GROUND_F: i32 = 3;
/// Hyperfine quantum number of the storage manifold.
pub const STORAGE_F: i32 = 4;

/// Physical constants of the memory. All values strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalConstants {
    /// Landé factor of the `F = 3` ground state expressed as a Larmor
    /// frequency per unit field, MHz/G. The `F = 4` factor has equal
    /// magnitude and opposite sign and is never stored separately.
    pub g_factor_mhz_per_gauss: f64,
    /// Ground hyperfine (clock) transition frequency, GHz. A global phase
    /// only; kept for documentation and interface completeness.
    pub clock_frequency_ghz: f64,
    /// Mass of a cesium atom, kg.
    pub cs_mass_kg: f64,
    /// Signal-beam wavelength, nm.
    pub signal_wavelength_nm: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            g_factor_mhz_per_gauss: 0.35,
            clock_frequency_ghz: 9.193,
            cs_mass_kg: 2.207e-25,
            signal_wavelength_nm: 852.0,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("g_factor_mhz_per_gauss", self.g_factor_mhz_per_gauss),
            ("clock_frequency_ghz", self.clock_frequency_ghz),
            ("cs_mass_kg", self.cs_mass_kg),
            ("signal_wavelength_nm", self.signal_wavelength_nm),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::validation(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// A single magnetic sublevel `|F, m_F⟩` of the ground manifold pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SublevelIndex {
    pub f: i32,
    pub m: i32,
}

impl SublevelIndex {
    pub fn new(f: i32, m: i32) -> Result<Self> {
        if f != GROUND_F && f != STORAGE_F {
            return Err(Error::validation(format!(
                "hyperfine number must be {GROUND_F} or {STORAGE_F}, got {f}"
            )));
        }
        if m.abs() > f {
            return Err(Error::validation(format!("|m_F| = {} exceeds F = {f}", m.abs())));
        }
        Ok(SublevelIndex { f, m })
    }
}

/// Which form of the retrieval model applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// General interference of all allowed `(n, m)` coherences.
    Unpolarized,
    /// σ⁺/σ⁺ beams along the field: only diagonal `m = n` coherences.
    SigmaPlus,
    /// Diagonal case restricted to the two stretched-most coherences
    /// `m_F = 3` and `m_F = 2`.
    TwoLevel,
}

impl Scheme {
    /// Kebab-case name used by configuration files and CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Unpolarized => "unpolarized",
            Scheme::SigmaPlus => "sigma-plus",
            Scheme::TwoLevel => "two-level",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unpolarized" => Ok(Scheme::Unpolarized),
            "sigma-plus" => Ok(Scheme::SigmaPlus),
            "two-level" => Ok(Scheme::TwoLevel),
            other => Err(Error::domain(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Larmor frequency `f_L = g·B` as an ordinary frequency in MHz.
///
/// All phases downstream are `2π·f_L·t` with `t` in µs.
pub fn larmor_frequency(consts: &PhysicalConstants, b_field_gauss: f64) -> Result<f64> {
    consts.validate()?;
    if !(b_field_gauss >= 0.0) {
        return Err(Error::domain(format!(
            "magnetic field must be non-negative, got {b_field_gauss} G"
        )));
    }
    Ok(consts.g_factor_mhz_per_gauss * b_field_gauss)
}

/// Frequency of the spin wave formed from ground sublevel `n` and storage
/// sublevel `m`, relative to the clock transition, in MHz.
///
/// Linear Zeeman model: `(n + m)·f_L`. For the σ⁺ diagonal case `m = n`
/// this is `2m·f_L`, the shift used for detuning selectivity.
pub fn spin_wave_detuning(
    consts: &PhysicalConstants,
    n: i32,
    m: i32,
    b_field_gauss: f64,
) -> Result<f64> {
    if n.abs() > GROUND_F {
        return Err(Error::domain(format!("|n| = {} exceeds F = {GROUND_F}", n.abs())));
    }
    if m.abs() > STORAGE_F {
        return Err(Error::domain(format!("|m| = {} exceeds F = {STORAGE_F}", m.abs())));
    }
    Ok(f64::from(n + m) * larmor_frequency(consts, b_field_gauss)?)
}

/// Two-photon selection rule: a coherence between ground `n` and storage `m`
/// can only be written when `|n − m| ≤ 2`, each photon changing the magnetic
/// number by at most one. Out-of-range sublevels are simply not allowed.
pub fn selection_rule_allowed(n: i32, m: i32) -> bool {
    n.abs() <= GROUND_F && m.abs() <= STORAGE_F && (n - m).abs() <= 2
}

/// All `(n, m)` pairs satisfying the selection rule, row-major in `n`.
pub fn allowed_pairs() -> Vec<(i32, i32)> {
    let mut pairs = Vec::new();
    for n in -GROUND_F..=GROUND_F {
        for m in -STORAGE_F..=STORAGE_F {
            if selection_rule_allowed(n, m) {
                pairs.push((n, m));
            }
        }
    }
    pairs
}
