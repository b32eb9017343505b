//! From experimental knobs to effective coherence weights.
//!
//! Optical pumping concentrates the atoms near the stretched `m_F = 3`
//! state; the two-photon detuning Δ of the write process then favors the
//! coherences whose Zeeman-shifted resonance `Δ_sw(m) = 2m·f_L` lies
//! closest to Δ. The selectivity weight is a unit-peak Lorentzian of the
//! storage process width.

use crate::error::{Error, Result};
use crate::interference::{
    oscillation_extrema, oscillation_period, DiagonalCoherences, ModelParams, N_GROUND,
};
use crate::zeeman::{spin_wave_detuning, PhysicalConstants, GROUND_F};

/// Where the unpumped population remainder sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemainderPolicy {
    /// Everything not in `m = 3` sits in `m = 2`.
    AllInNextLower,
    /// Remainder spread uniformly over `m ∈ [−3, 2]`.
    UniformBelow,
}

impl RemainderPolicy {
    pub fn name(self) -> &'static str {
        match self {
            RemainderPolicy::AllInNextLower => "all-in-next-lower",
            RemainderPolicy::UniformBelow => "uniform-below",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all-in-next-lower" => Ok(RemainderPolicy::AllInNextLower),
            "uniform-below" => Ok(RemainderPolicy::UniformBelow),
            other => Err(Error::domain(format!("unknown remainder policy '{other}'"))),
        }
    }
}

/// Quality of the optical pumping into the stretched state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpState {
    /// Fraction of atoms pumped into `|F = 3, m_F = 3⟩`, in `[0, 1]`.
    pub polarized_fraction: f64,
    pub remainder_policy: RemainderPolicy,
}

impl PumpState {
    pub fn new(polarized_fraction: f64, remainder_policy: RemainderPolicy) -> Result<Self> {
        if !(0.0..=1.0).contains(&polarized_fraction) {
            return Err(Error::validation(format!(
                "polarized fraction must lie in [0, 1], got {polarized_fraction}"
            )));
        }
        Ok(PumpState { polarized_fraction, remainder_policy })
    }
}

/// Frequency selectivity of the two-photon storage process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectivityModel {
    /// Lorentzian FWHM of the storage process, MHz.
    pub eit_width_mhz: f64,
    /// Two-photon detuning Δ of the beams from the clock transition, MHz.
    pub detuning_mhz: f64,
}

impl SelectivityModel {
    pub fn new(eit_width_mhz: f64, detuning_mhz: f64) -> Result<Self> {
        let sel = SelectivityModel { eit_width_mhz, detuning_mhz };
        sel.validate()?;
        Ok(sel)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eit_width_mhz > 0.0) || !self.eit_width_mhz.is_finite() {
            return Err(Error::validation(format!(
                "EIT width must be positive, got {}",
                self.eit_width_mhz
            )));
        }
        if !self.detuning_mhz.is_finite() {
            return Err(Error::validation("detuning must be finite".to_string()));
        }
        Ok(())
    }

    pub fn with_detuning(&self, detuning_mhz: f64) -> Self {
        SelectivityModel { detuning_mhz, ..*self }
    }
}

/// Unit-peak Lorentzian with full width at half maximum `fwhm`.
fn lorentzian(x: f64, fwhm: f64) -> f64 {
    let u = 2.0 * x / fwhm;
    1.0 / (1.0 + u * u)
}

/// Base weights `q_m` produced by the pumping stage alone.
pub fn pump_distribution(pump: &PumpState) -> Result<DiagonalCoherences> {
    PumpState::new(pump.polarized_fraction, pump.remainder_policy)?;
    let fraction = pump.polarized_fraction;
    let mut weights = [0.0; N_GROUND];
    weights[(3 + GROUND_F) as usize] = fraction;
    match pump.remainder_policy {
        RemainderPolicy::AllInNextLower => {
            weights[(2 + GROUND_F) as usize] = 1.0 - fraction;
        }
        RemainderPolicy::UniformBelow => {
            let share = (1.0 - fraction) / 6.0;
            for m in -GROUND_F..=2 {
                weights[(m + GROUND_F) as usize] = share;
            }
        }
    }
    DiagonalCoherences::from_unnormalized(weights)
}

/// Selectivity-modulated weights together with the pre-normalization sum
/// `Σ_m q_m·L_m`, the overall storage amplitude factor at this detuning.
pub fn detuned_coherences(
    consts: &PhysicalConstants,
    q: &DiagonalCoherences,
    sel: &SelectivityModel,
    b_field_gauss: f64,
) -> Result<(DiagonalCoherences, f64)> {
    sel.validate()?;
    let mut weighted = [0.0; N_GROUND];
    let mut sum = 0.0;
    for m in -GROUND_F..=GROUND_F {
        let resonance = spin_wave_detuning(consts, m, m, b_field_gauss)?;
        let w = q.get(m) * lorentzian(sel.detuning_mhz - resonance, sel.eit_width_mhz);
        weighted[(m + GROUND_F) as usize] = w;
        sum += w;
    }
    if !(sum > 0.0) {
        return Err(Error::validation(
            "selectivity annihilated all coherence weight".to_string(),
        ));
    }
    let mut normalized = weighted;
    for w in &mut normalized {
        *w /= sum;
    }
    Ok((DiagonalCoherences::from_unnormalized(normalized)?, sum))
}

/// Effective coherence weights after detuning selectivity, normalized.
pub fn apply_detuning_selectivity(
    consts: &PhysicalConstants,
    q: &DiagonalCoherences,
    sel: &SelectivityModel,
    b_field_gauss: f64,
) -> Result<DiagonalCoherences> {
    Ok(detuned_coherences(consts, q, sel, b_field_gauss)?.0)
}

const SUPPORT_THRESHOLD: f64 = 1e-14;

/// Relative oscillation amplitude of weights `p`: the two-coherence closed
/// form when only two sublevels carry weight, numerical extrema otherwise.
pub fn relative_amplitude_of(
    consts: &PhysicalConstants,
    p: &DiagonalCoherences,
    b_field_gauss: f64,
) -> Result<f64> {
    let support = p.support(SUPPORT_THRESHOLD);
    match support.len() {
        0 | 1 => Ok(0.0),
        2 => {
            let a = p.get(support[0]);
            let b = p.get(support[1]);
            Ok(4.0 * a * b / (a + b).powi(2))
        }
        _ => {
            let params = ModelParams::sigma_plus(
                p.clone(),
                b_field_gauss,
                crate::interference::DecayEnvelope::None,
                1.0,
            )?;
            let period =
                oscillation_period(consts, b_field_gauss, crate::zeeman::Scheme::SigmaPlus)?;
            let ext = oscillation_extrema(consts, &params, (0.0, period))?;
            Ok((ext.max - ext.min) / ext.max)
        }
    }
}

/// Predicted relative oscillation amplitude after pumping and selectivity.
pub fn predicted_relative_amplitude(
    consts: &PhysicalConstants,
    q: &DiagonalCoherences,
    sel: &SelectivityModel,
    b_field_gauss: f64,
) -> Result<f64> {
    let p = apply_detuning_selectivity(consts, q, sel, b_field_gauss)?;
    relative_amplitude_of(consts, &p, b_field_gauss)
}

/// Solve for the EIT width that makes the predicted relative amplitude hit
/// `target_r` at the given detuning and field. Bisection over `bracket`;
/// the prediction is monotone in the width for two-component pumping.
pub fn calibrate_eit_width(
    consts: &PhysicalConstants,
    q: &DiagonalCoherences,
    b_field_gauss: f64,
    detuning_mhz: f64,
    target_r: f64,
    bracket: (f64, f64),
) -> Result<f64> {
    if !(0.0..=1.0).contains(&target_r) {
        return Err(Error::domain(format!("target R must lie in [0, 1], got {target_r}")));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::domain(format!("invalid width bracket ({lo}, {hi})")));
    }
    let r_at = |width: f64| -> Result<f64> {
        let sel = SelectivityModel::new(width, detuning_mhz)?;
        predicted_relative_amplitude(consts, q, &sel, b_field_gauss)
    };
    let mut f_lo = r_at(lo)? - target_r;
    let f_hi = r_at(hi)? - target_r;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Calibration(format!(
            "target R = {target_r} not bracketed by widths ({lo}, {hi}) MHz"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = r_at(mid)? - target_r;
        if f_mid == 0.0 || hi - lo < 1e-12 * hi.max(1.0) {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn pump_distribution_examples() {
        let q = pump_distribution(
            &PumpState::new(0.8, RemainderPolicy::AllInNextLower).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(q.get(3), 0.8, max_relative = 1e-15);
        assert_relative_eq!(q.get(2), 0.2, max_relative = 1e-15);
        assert_eq!(q.get(1), 0.0);

        let pure = pump_distribution(
            &PumpState::new(1.0, RemainderPolicy::UniformBelow).unwrap(),
        )
        .unwrap();
        assert_eq!(pure.get(3), 1.0);

        let spread = pump_distribution(
            &PumpState::new(0.8, RemainderPolicy::UniformBelow).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(spread.get(3), 0.8, max_relative = 1e-15);
        for m in -3..=2 {
            assert_relative_eq!(spread.get(m), 0.2 / 6.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn pump_state_rejects_bad_fraction() {
        assert!(PumpState::new(1.2, RemainderPolicy::AllInNextLower).is_err());
        assert!(PumpState::new(-0.1, RemainderPolicy::AllInNextLower).is_err());
    }

    #[test]
    fn zero_field_leaves_weights_unchanged() {
        let c = consts();
        let q = pump_distribution(
            &PumpState::new(0.7, RemainderPolicy::UniformBelow).unwrap(),
        )
        .unwrap();
        for detuning in [-3.0, 0.0, 2.5, 40.0] {
            let sel = SelectivityModel::new(1.3, detuning).unwrap();
            let p = apply_detuning_selectivity(&c, &q, &sel, 0.0).unwrap();
            for m in -3..=3 {
                assert_relative_eq!(p.get(m), q.get(m), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn resonant_narrow_selectivity_isolates_stretched_state() {
        let c = consts();
        let q = pump_distribution(
            &PumpState::new(0.8, RemainderPolicy::AllInNextLower).unwrap(),
        )
        .unwrap();
        // Narrow width, large field: Δ on the m = 3 resonance.
        let resonance = spin_wave_detuning(&c, 3, 3, 20.0).unwrap();
        let sel = SelectivityModel::new(0.01, resonance).unwrap();
        let p = apply_detuning_selectivity(&c, &q, &sel, 20.0).unwrap();
        assert!(p.get(3) > 1.0 - 1e-6);
        assert!(p.get(2) < 1e-6);
    }

    #[test]
    fn two_component_relative_amplitude_is_closed_form() {
        let c = consts();
        let q = pump_distribution(
            &PumpState::new(0.8, RemainderPolicy::AllInNextLower).unwrap(),
        )
        .unwrap();
        let sel = SelectivityModel::new(2.0, 0.0).unwrap();
        // B → 0: selectivity cancels, R = 4·q₂·q₃.
        let r = predicted_relative_amplitude(&c, &q, &sel, 0.0).unwrap();
        assert_relative_eq!(r, 4.0 * 0.2 * 0.8, max_relative = 1e-12);

        let pure = DiagonalCoherences::pure(3).unwrap();
        assert_eq!(predicted_relative_amplitude(&c, &pure, &sel, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn calibration_hits_anchor() {
        // Width calibrated so that R(Δ = 6.5 MHz, B = 2.6 G) = 0.25 for
        // 80/20 pumping; the solved width sits in the MHz range.
        let c = consts();
        let q = pump_distribution(
            &PumpState::new(0.8, RemainderPolicy::AllInNextLower).unwrap(),
        )
        .unwrap();
        let width = calibrate_eit_width(&c, &q, 2.6, 6.5, 0.25, (0.1, 50.0)).unwrap();
        assert!(width > 1.0 && width < 10.0, "width = {width}");
        let sel = SelectivityModel::new(width, 6.5).unwrap();
        let r = predicted_relative_amplitude(&c, &q, &sel, 2.6).unwrap();
        assert!((r - 0.25).abs() < 1e-9, "r = {r}");
    }

    #[test]
    fn multi_component_path_matches_grid() {
        let c = consts();
        let q = pump_distribution(
            &PumpState::new(0.4, RemainderPolicy::UniformBelow).unwrap(),
        )
        .unwrap();
        let sel = SelectivityModel::new(2.0, 1.0).unwrap();
        let p = apply_detuning_selectivity(&c, &q, &sel, 1.0).unwrap();
        let r = relative_amplitude_of(&c, &p, 1.0).unwrap();
        // Brute-force oracle on a dense grid.
        let params = ModelParams::sigma_plus(
            p.clone(),
            1.0,
            crate::interference::DecayEnvelope::None,
            1.0,
        )
        .unwrap();
        let period = oscillation_period(&c, 1.0, crate::zeeman::Scheme::SigmaPlus).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..20_000 {
            let t = period * i as f64 / 20_000.0;
            let v = crate::interference::retrieval_sigma_plus(&c, t, &params).unwrap();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert_relative_eq!(r, (hi - lo) / hi, max_relative = 1e-6);
    }
}
