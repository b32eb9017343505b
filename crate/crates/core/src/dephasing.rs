//! Lifetime estimators for the two dephasing mechanisms of the memory:
//! magnetic-field gradients across the cloud and thermal atomic motion.
//!
//! Both produce Gaussian envelopes `exp(−t²/τ²)` under the 1/e lifetime
//! convention; simultaneous mechanisms combine in quadrature,
//! `1/τ² = 1/τ_a² + 1/τ_b²`.

use crate::error::{Error, Result};
use crate::zeeman::PhysicalConstants;

/// Boltzmann constant, J/K.
pub const BOLTZMANN_J_PER_K: f64 = 1.380_649e-23;

/// Geometry and temperature of the atomic cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudGeometry {
    /// Cloud temperature, µK.
    pub temperature_uk: f64,
    /// 1/e Gaussian radius along the gradient axis, cm.
    pub rms_size_cm: f64,
    /// Angle between signal and control beams, rad. Zero is the degenerate
    /// co-propagating limit (no motional dephasing).
    pub beam_angle_rad: f64,
    /// Beam wavelength, nm.
    pub wavelength_nm: f64,
}

impl CloudGeometry {
    pub fn new(
        temperature_uk: f64,
        rms_size_cm: f64,
        beam_angle_rad: f64,
        wavelength_nm: f64,
    ) -> Result<Self> {
        let cloud = CloudGeometry { temperature_uk, rms_size_cm, beam_angle_rad, wavelength_nm };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_uk > 0.0) {
            return Err(Error::validation(format!(
                "temperature must be positive, got {} uK",
                self.temperature_uk
            )));
        }
        if !(self.rms_size_cm > 0.0) {
            return Err(Error::validation(format!(
                "cloud size must be positive, got {} cm",
                self.rms_size_cm
            )));
        }
        if !(self.beam_angle_rad >= 0.0) {
            return Err(Error::validation(format!(
                "beam angle must be non-negative, got {} rad",
                self.beam_angle_rad
            )));
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(Error::validation(format!(
                "wavelength must be positive, got {} nm",
                self.wavelength_nm
            )));
        }
        Ok(())
    }
}

/// Gradient-limited lifetime in µs.
///
/// A Gaussian position spread `σ_z` in a gradient `∇B` gives each coherence
/// a Gaussian frequency spread `2·m_F·g·∇B·σ_z`, hence the envelope
/// `exp(−t²/τ²)` with `τ = 1/(2π·2·m_F·g·∇B·σ_z)`. A vanishing gradient or
/// `m_F = 0` returns the infinite-lifetime sentinel.
pub fn gradient_lifetime(
    consts: &PhysicalConstants,
    gradient_mg_per_cm: f64,
    cloud: &CloudGeometry,
    m_f: i32,
) -> Result<f64> {
    consts.validate()?;
    cloud.validate()?;
    if !(gradient_mg_per_cm >= 0.0) {
        return Err(Error::domain(format!(
            "gradient must be non-negative, got {gradient_mg_per_cm} mG/cm"
        )));
    }
    if gradient_mg_per_cm == 0.0 || m_f == 0 {
        return Ok(f64::INFINITY);
    }
    let gradient_g_per_cm = gradient_mg_per_cm * 1e-3;
    let spread_mhz = 2.0
        * f64::from(m_f.abs())
        * consts.g_factor_mhz_per_gauss
        * gradient_g_per_cm
        * cloud.rms_size_cm;
    Ok(1.0 / (std::f64::consts::TAU * spread_mhz))
}

/// Gradient in mG/cm implied by an observed lifetime; exact algebraic
/// inverse of [`gradient_lifetime`].
pub fn gradient_from_lifetime(
    consts: &PhysicalConstants,
    tau_us: f64,
    cloud: &CloudGeometry,
    m_f: i32,
) -> Result<f64> {
    consts.validate()?;
    cloud.validate()?;
    if !(tau_us > 0.0) {
        return Err(Error::domain(format!("lifetime must be positive, got {tau_us} us")));
    }
    if m_f == 0 {
        return Err(Error::domain("m_F = 0 carries no gradient information".to_string()));
    }
    if tau_us.is_infinite() {
        return Ok(0.0);
    }
    let spread_mhz = 1.0 / (std::f64::consts::TAU * tau_us);
    let gradient_g_per_cm = spread_mhz
        / (2.0 * f64::from(m_f.abs()) * consts.g_factor_mhz_per_gauss * cloud.rms_size_cm);
    Ok(gradient_g_per_cm * 1e3)
}

/// Motion-limited lifetime in µs.
///
/// The stored spin wave has wavenumber `k_sw = (4π/λ)·sin(θ/2)` from the
/// two-beam wavevector difference; thermal motion with 1D velocity spread
/// `σ_v = √(k_B·T/m)` dephases it in `τ = 1/(k_sw·σ_v)`.
pub fn motional_lifetime(cloud: &CloudGeometry, consts: &PhysicalConstants) -> Result<f64> {
    consts.validate()?;
    cloud.validate()?;
    if cloud.beam_angle_rad == 0.0 {
        return Ok(f64::INFINITY);
    }
    let wavelength_m = cloud.wavelength_nm * 1e-9;
    let k_sw = 4.0 * std::f64::consts::PI / wavelength_m * (cloud.beam_angle_rad / 2.0).sin();
    let sigma_v = (BOLTZMANN_J_PER_K * cloud.temperature_uk * 1e-6 / consts.cs_mass_kg).sqrt();
    Ok(1e6 / (k_sw * sigma_v))
}

/// Quadrature combination of two Gaussian 1/e lifetimes.
pub fn combined_lifetime(tau_a_us: f64, tau_b_us: f64) -> f64 {
    let inv_sq = tau_a_us.powi(-2) + tau_b_us.powi(-2);
    if inv_sq == 0.0 {
        f64::INFINITY
    } else {
        inv_sq.sqrt().recip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn cloud(rms_size_cm: f64) -> CloudGeometry {
        CloudGeometry::new(13.0, rms_size_cm, 0.5f64.to_radians(), 852.0).unwrap()
    }

    #[test]
    fn gradient_size_product_from_observed_lifetime() {
        // τ = 440 µs and m_F = 3 pin the product ∇B·σ_z ≈ 0.172 mG.
        let c = consts();
        let product_mg = 1e3 / (TAU * 2.0 * 3.0 * 0.35 * 440.0);
        assert!((product_mg - 0.172).abs() < 5e-4);
        for rms in [0.02, 0.025, 0.03, 0.05] {
            let grad = gradient_from_lifetime(&c, 440.0, &cloud(rms), 3).unwrap();
            assert_relative_eq!(grad * rms, product_mg, max_relative = 1e-12);
        }
        // The paper-scale gradient of ~7 mG/cm corresponds to σ_z ≈ 0.025 cm.
        let grad = gradient_from_lifetime(&c, 440.0, &cloud(0.025), 3).unwrap();
        assert!((grad - 6.89).abs() < 0.01, "grad = {grad}");
    }

    #[test]
    fn gradient_lifetime_round_trip() {
        let c = consts();
        let geom = cloud(0.03);
        for grad in [0.5, 7.0, 42.0] {
            let tau = gradient_lifetime(&c, grad, &geom, 3).unwrap();
            let back = gradient_from_lifetime(&c, tau, &geom, 3).unwrap();
            assert_relative_eq!(back, grad, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_lifetime_scaling_and_sentinels() {
        let c = consts();
        let geom = cloud(0.03);
        assert_eq!(gradient_lifetime(&c, 0.0, &geom, 3).unwrap(), f64::INFINITY);
        assert_eq!(gradient_lifetime(&c, 5.0, &geom, 0).unwrap(), f64::INFINITY);
        let tau1 = gradient_lifetime(&c, 5.0, &geom, 1).unwrap();
        let tau2 = gradient_lifetime(&c, 5.0, &geom, 2).unwrap();
        assert_relative_eq!(tau1, 2.0 * tau2, max_relative = 1e-12);
        assert!(gradient_lifetime(&c, -1.0, &geom, 3).is_err());
        assert!(gradient_from_lifetime(&c, 0.0, &geom, 3).is_err());
    }

    #[test]
    fn motional_lifetime_matches_kinetic_estimate() {
        // Independent recomputation from SI quantities.
        let c = consts();
        let geom = cloud(0.03);
        let k_sw = 4.0 * std::f64::consts::PI / 852e-9 * (geom.beam_angle_rad / 2.0).sin();
        let sigma_v = (BOLTZMANN_J_PER_K * 13e-6 / 2.207e-25).sqrt();
        let expected_us = 1e6 / (k_sw * sigma_v);
        let tau = motional_lifetime(&geom, &c).unwrap();
        assert_relative_eq!(tau, expected_us, max_relative = 1e-12);
        assert!((tau - 544.9).abs() < 0.5, "tau = {tau}");
    }

    #[test]
    fn motional_lifetime_scaling_and_sentinel() {
        let c = consts();
        let base = cloud(0.03);
        let hot = CloudGeometry::new(52.0, 0.03, base.beam_angle_rad, 852.0).unwrap();
        assert_relative_eq!(
            motional_lifetime(&base, &c).unwrap(),
            2.0 * motional_lifetime(&hot, &c).unwrap(),
            max_relative = 1e-12
        );
        let parallel = CloudGeometry::new(13.0, 0.03, 0.0, 852.0).unwrap();
        assert_eq!(motional_lifetime(&parallel, &c).unwrap(), f64::INFINITY);
    }

    #[test]
    fn combined_lifetime_quadrature() {
        assert_relative_eq!(
            combined_lifetime(300.0, 400.0),
            1.0 / (300.0f64.powi(-2) + 400.0f64.powi(-2)).sqrt(),
            max_relative = 1e-15
        );
        assert_eq!(combined_lifetime(f64::INFINITY, f64::INFINITY), f64::INFINITY);
        assert_relative_eq!(
            combined_lifetime(250.0, f64::INFINITY),
            250.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn geometry_validation() {
        assert!(CloudGeometry::new(0.0, 0.03, 0.01, 852.0).is_err());
        assert!(CloudGeometry::new(13.0, -0.1, 0.01, 852.0).is_err());
        assert!(CloudGeometry::new(13.0, 0.03, -0.01, 852.0).is_err());
        assert!(CloudGeometry::new(13.0, 0.03, 0.01, 0.0).is_err());
    }
}
