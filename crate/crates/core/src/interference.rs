//! The retrieval-amplitude model.
//!
//! Storage populates a set of spin-wave coherences; each precesses at its
//! own Zeeman-shifted frequency and the retrieved amplitude is the squared
//! modulus of their weighted phasor sum, damped by a dephasing envelope:
//!
//! ```text
//! A(t) = A(0) · |Σ w_k exp(i·2π·f_k·t)|² · f(t, τ)
//! ```
//!
//! The common clock frequency is a global phase and drops out of the
//! modulus, so it never enters the computation. Three forms are provided:
//! the general double sum over `(n, m)`, the σ⁺ diagonal sum over `m`, and
//! the closed two-coherence form
//! `A(0)[p₃² + p₂² + 2p₂p₃·cos(2π·2f_L·t)]·f(t, τ)`.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::search::golden_max;
use crate::zeeman::{
    allowed_pairs, larmor_frequency, selection_rule_allowed, PhysicalConstants, Scheme, GROUND_F,
    STORAGE_F,
};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Number of ground sublevels (`n ∈ [−3, 3]`).
pub const N_GROUND: usize = (2 * GROUND_F + 1) as usize;
/// Number of storage sublevels (`m ∈ [−4, 4]`).
pub const N_STORAGE: usize = (2 * STORAGE_F + 1) as usize;

/// Non-negative coherence amplitudes `P(n, m)` over ground sublevels
/// `n ∈ [−3, 3]` (rows) and storage sublevels `m ∈ [−4, 4]` (columns).
///
/// Entries forbidden by the selection rule (`|n − m| > 2`) are exactly zero
/// and the whole table sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceMatrix {
    weights: [[f64; N_STORAGE]; N_GROUND],
}

impl CoherenceMatrix {
    pub fn new(weights: [[f64; N_STORAGE]; N_GROUND]) -> Result<Self> {
        let mut sum = 0.0;
        for n in -GROUND_F..=GROUND_F {
            for m in -STORAGE_F..=STORAGE_F {
                let w = weights[(n + GROUND_F) as usize][(m + STORAGE_F) as usize];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::validation(format!(
                        "P({n},{m}) must be finite and non-negative, got {w}"
                    )));
                }
                if !selection_rule_allowed(n, m) && w != 0.0 {
                    return Err(Error::validation(format!(
                        "P({n},{m}) = {w} violates the selection rule |n-m| <= 2"
                    )));
                }
                sum += w;
            }
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::validation(format!(
                "coherence weights must sum to 1, got {sum}"
            )));
        }
        Ok(CoherenceMatrix { weights })
    }

    /// Uniform weight on every selection-rule-allowed entry.
    pub fn uniform() -> Self {
        let pairs = allowed_pairs();
        let w = 1.0 / pairs.len() as f64;
        let mut weights = [[0.0; N_STORAGE]; N_GROUND];
        for (n, m) in pairs {
            weights[(n + GROUND_F) as usize][(m + STORAGE_F) as usize] = w;
        }
        CoherenceMatrix { weights }
    }

    /// Embed diagonal σ⁺ weights `p_m` as `P(m, m)`.
    pub fn from_diagonal(diag: &DiagonalCoherences) -> Self {
        let mut weights = [[0.0; N_STORAGE]; N_GROUND];
        for m in -GROUND_F..=GROUND_F {
            weights[(m + GROUND_F) as usize][(m + STORAGE_F) as usize] = diag.get(m);
        }
        CoherenceMatrix { weights }
    }

    pub fn get(&self, n: i32, m: i32) -> f64 {
        self.weights[(n + GROUND_F) as usize][(m + STORAGE_F) as usize]
    }

    /// Iterate over allowed entries as `(n, m, weight)`.
    pub fn iter_allowed(&self) -> impl Iterator<Item = (i32, i32, f64)> + '_ {
        allowed_pairs().into_iter().map(move |(n, m)| (n, m, self.get(n, m)))
    }

    /// Weight collapsed onto each spin-wave frequency index `s = n + m`,
    /// returned as `(s, Σ_{n+m=s} P(n,m))` for nonzero sums.
    pub fn diagonal_sums(&self) -> Vec<(i32, f64)> {
        let mut sums = vec![0.0; (2 * (GROUND_F + STORAGE_F) + 1) as usize];
        for (n, m, w) in self.iter_allowed() {
            sums[(n + m + GROUND_F + STORAGE_F) as usize] += w;
        }
        sums.into_iter()
            .enumerate()
            .filter(|(_, w)| *w > 0.0)
            .map(|(i, w)| (i as i32 - GROUND_F - STORAGE_F, w))
            .collect()
    }
}

/// Diagonal σ⁺ coherence weights `p_m`, `m ∈ [−3, 3]`, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCoherences {
    weights: [f64; N_GROUND],
}

impl DiagonalCoherences {
    pub fn new(weights: [f64; N_GROUND]) -> Result<Self> {
        let mut sum = 0.0;
        for (i, w) in weights.iter().enumerate() {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::validation(format!(
                    "p_{} must be finite and non-negative, got {w}",
                    i as i32 - GROUND_F
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::validation(format!("p_m must sum to 1, got {sum}")));
        }
        Ok(DiagonalCoherences { weights })
    }

    /// Rescale arbitrary non-negative weights to sum to one.
    pub fn from_unnormalized(raw: [f64; N_GROUND]) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::validation(format!(
                "weights must have a positive finite sum, got {sum}"
            )));
        }
        let mut weights = raw;
        for w in &mut weights {
            *w /= sum;
        }
        DiagonalCoherences::new(weights)
    }

    /// Two coherences only: `p₂ = p2`, `p₃ = 1 − p2`.
    pub fn two_level(p2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p2) {
            return Err(Error::domain(format!("p2 must lie in [0, 1], got {p2}")));
        }
        let mut weights = [0.0; N_GROUND];
        weights[(2 + GROUND_F) as usize] = p2;
        weights[(3 + GROUND_F) as usize] = 1.0 - p2;
        Ok(DiagonalCoherences { weights })
    }

    /// All weight on a single sublevel.
    pub fn pure(m: i32) -> Result<Self> {
        if m.abs() > GROUND_F {
            return Err(Error::domain(format!("|m| = {} exceeds F = {GROUND_F}", m.abs())));
        }
        let mut weights = [0.0; N_GROUND];
        weights[(m + GROUND_F) as usize] = 1.0;
        Ok(DiagonalCoherences { weights })
    }

    pub fn get(&self, m: i32) -> f64 {
        self.weights[(m + GROUND_F) as usize]
    }

    pub fn weights(&self) -> &[f64; N_GROUND] {
        &self.weights
    }

    /// Sublevels carrying more than `threshold` of the weight.
    pub fn support(&self, threshold: f64) -> Vec<i32> {
        (-GROUND_F..=GROUND_F).filter(|m| self.get(*m) > threshold).collect()
    }
}

/// Dephasing law applied multiplicatively to the interference factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayEnvelope {
    /// `exp(−t²/τ²)`; the 1/e lifetime convention used throughout.
    Gaussian { tau_us: f64 },
    /// `exp(−t/τ)`.
    Exponential { tau_us: f64 },
    /// No decay.
    None,
}

impl DecayEnvelope {
    pub fn validate(&self) -> Result<()> {
        match self.tau_us() {
            Some(tau) if !(tau > 0.0) => {
                Err(Error::validation(format!("tau must be positive, got {tau}")))
            }
            _ => Ok(()),
        }
    }

    pub fn tau_us(&self) -> Option<f64> {
        match *self {
            DecayEnvelope::Gaussian { tau_us } | DecayEnvelope::Exponential { tau_us } => {
                Some(tau_us)
            }
            DecayEnvelope::None => None,
        }
    }

    /// Same law with a different lifetime (no-op for `None`).
    pub fn with_tau(&self, tau_us: f64) -> Self {
        match self {
            DecayEnvelope::Gaussian { .. } => DecayEnvelope::Gaussian { tau_us },
            DecayEnvelope::Exponential { .. } => DecayEnvelope::Exponential { tau_us },
            DecayEnvelope::None => DecayEnvelope::None,
        }
    }
}

/// Coherence weights in the representation matching the scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum Coherences {
    Matrix(CoherenceMatrix),
    Diagonal(DiagonalCoherences),
}

/// Full parameter set of the retrieval model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub scheme: Scheme,
    pub coherences: Coherences,
    pub b_field_gauss: f64,
    pub envelope: DecayEnvelope,
    /// Initial amplitude `A(0)`, arbitrary units.
    pub amplitude_scale: f64,
}

impl ModelParams {
    pub fn unpolarized(
        matrix: CoherenceMatrix,
        b_field_gauss: f64,
        envelope: DecayEnvelope,
        amplitude_scale: f64,
    ) -> Result<Self> {
        let params = ModelParams {
            scheme: Scheme::Unpolarized,
            coherences: Coherences::Matrix(matrix),
            b_field_gauss,
            envelope,
            amplitude_scale,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn sigma_plus(
        diag: DiagonalCoherences,
        b_field_gauss: f64,
        envelope: DecayEnvelope,
        amplitude_scale: f64,
    ) -> Result<Self> {
        let params = ModelParams {
            scheme: Scheme::SigmaPlus,
            coherences: Coherences::Diagonal(diag),
            b_field_gauss,
            envelope,
            amplitude_scale,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn two_level(
        p2: f64,
        b_field_gauss: f64,
        envelope: DecayEnvelope,
        amplitude_scale: f64,
    ) -> Result<Self> {
        let params = ModelParams {
            scheme: Scheme::TwoLevel,
            coherences: Coherences::Diagonal(DiagonalCoherences::two_level(p2)?),
            b_field_gauss,
            envelope,
            amplitude_scale,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_field_gauss >= 0.0) || !self.b_field_gauss.is_finite() {
            return Err(Error::validation(format!(
                "magnetic field must be non-negative, got {}",
                self.b_field_gauss
            )));
        }
        if !(self.amplitude_scale >= 0.0) || !self.amplitude_scale.is_finite() {
            return Err(Error::validation(format!(
                "amplitude scale must be non-negative, got {}",
                self.amplitude_scale
            )));
        }
        self.envelope.validate()?;
        match (self.scheme, &self.coherences) {
            (Scheme::Unpolarized, Coherences::Matrix(_)) => Ok(()),
            (Scheme::SigmaPlus, Coherences::Diagonal(_)) => Ok(()),
            (Scheme::TwoLevel, Coherences::Diagonal(diag)) => {
                for m in -GROUND_F..=GROUND_F {
                    if !(m == 2 || m == 3) && diag.get(m) != 0.0 {
                        return Err(Error::validation(format!(
                            "two-level weights must live on m = 2, 3; found p_{m} = {}",
                            diag.get(m)
                        )));
                    }
                }
                Ok(())
            }
            (scheme, _) => Err(Error::validation(format!(
                "coherence representation does not match scheme {}",
                scheme.name()
            ))),
        }
    }

    /// `p₂` of a two-level parameter set.
    pub fn p2(&self) -> Option<f64> {
        match (&self.scheme, &self.coherences) {
            (Scheme::TwoLevel, Coherences::Diagonal(d)) => Some(d.get(2)),
            _ => None,
        }
    }
}

/// Evaluate the dephasing envelope at storage time `t` (µs).
pub fn envelope_eval(envelope: &DecayEnvelope, t_us: f64) -> Result<f64> {
    envelope.validate()?;
    if !(t_us >= 0.0) {
        return Err(Error::domain(format!("storage time must be non-negative, got {t_us}")));
    }
    Ok(match *envelope {
        DecayEnvelope::Gaussian { tau_us } => (-(t_us / tau_us).powi(2)).exp(),
        DecayEnvelope::Exponential { tau_us } => (-t_us / tau_us).exp(),
        DecayEnvelope::None => 1.0,
    })
}

/// Frequencies (MHz) and weights of the phasor sum for the given parameters.
fn phasor_components(consts: &PhysicalConstants, params: &ModelParams) -> Result<Vec<(f64, f64)>> {
    let f_l = larmor_frequency(consts, params.b_field_gauss)?;
    Ok(match &params.coherences {
        Coherences::Matrix(matrix) => matrix
            .diagonal_sums()
            .into_iter()
            .map(|(s, w)| (f64::from(s) * f_l, w))
            .collect(),
        Coherences::Diagonal(diag) => (-GROUND_F..=GROUND_F)
            .filter(|m| diag.get(*m) > 0.0)
            .map(|m| (f64::from(2 * m) * f_l, diag.get(m)))
            .collect(),
    })
}

/// Envelope-free interference factor `|Σ w_k exp(i·2π·f_k·t)|²`.
fn interference_factor(components: &[(f64, f64)], t_us: f64) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for &(freq, weight) in components {
        let phase = TAU * freq * t_us;
        re += weight * phase.cos();
        im += weight * phase.sin();
    }
    re * re + im * im
}

fn retrieval_from_components(
    components: &[(f64, f64)],
    params: &ModelParams,
    t_us: f64,
) -> Result<f64> {
    Ok(params.amplitude_scale
        * interference_factor(components, t_us)
        * envelope_eval(&params.envelope, t_us)?)
}

/// General retrieval amplitude, all allowed `(n, m)` coherences.
pub fn retrieval_general(
    consts: &PhysicalConstants,
    t_us: f64,
    params: &ModelParams,
) -> Result<f64> {
    params.validate()?;
    if params.scheme != Scheme::Unpolarized {
        return Err(Error::validation(format!(
            "retrieval_general expects the unpolarized scheme, got {}",
            params.scheme.name()
        )));
    }
    retrieval_from_components(&phasor_components(consts, params)?, params, t_us)
}

/// σ⁺ diagonal retrieval amplitude: coherences at `2m·f_L`, revivals every
/// half Larmor period.
pub fn retrieval_sigma_plus(
    consts: &PhysicalConstants,
    t_us: f64,
    params: &ModelParams,
) -> Result<f64> {
    params.validate()?;
    if !matches!(params.scheme, Scheme::SigmaPlus | Scheme::TwoLevel) {
        return Err(Error::validation(format!(
            "retrieval_sigma_plus expects a diagonal scheme, got {}",
            params.scheme.name()
        )));
    }
    retrieval_from_components(&phasor_components(consts, params)?, params, t_us)
}

/// Closed two-coherence form
/// `A(0)[p₃² + p₂² + 2p₂p₃·cos(2π·2f_L·t)]·f(t, τ)` with `p₃ = 1 − p₂`.
pub fn retrieval_two_level(
    consts: &PhysicalConstants,
    t_us: f64,
    p2: f64,
    b_field_gauss: f64,
    envelope: &DecayEnvelope,
    amplitude_scale: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&p2) {
        return Err(Error::domain(format!("p2 must lie in [0, 1], got {p2}")));
    }
    let p3 = 1.0 - p2;
    let f_l = larmor_frequency(consts, b_field_gauss)?;
    let oscillation = p3 * p3 + p2 * p2 + 2.0 * p2 * p3 * (TAU * 2.0 * f_l * t_us).cos();
    Ok(amplitude_scale * oscillation * envelope_eval(envelope, t_us)?)
}

/// Retrieval amplitude for any scheme (dispatches on the parameter set).
pub fn retrieval(consts: &PhysicalConstants, t_us: f64, params: &ModelParams) -> Result<f64> {
    match params.scheme {
        Scheme::Unpolarized => retrieval_general(consts, t_us, params),
        Scheme::SigmaPlus | Scheme::TwoLevel => retrieval_sigma_plus(consts, t_us, params),
    }
}

/// Relative oscillation amplitude `R = A_osc/A_max = 4·p₂·(1 − p₂)`.
pub fn relative_amplitude(p2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p2) {
        return Err(Error::domain(format!("p2 must lie in [0, 1], got {p2}")));
    }
    Ok(4.0 * p2 * (1.0 - p2))
}

/// Both solutions of `R = 4·p₂·(1 − p₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationRoots {
    /// The physical root `≤ 0.5` (the minority coherence).
    pub p2: f64,
    /// The complementary root `1 − p2`.
    pub alternate: f64,
}

/// Invert `R = 4·p₂·(1 − p₂)` for the minority population.
pub fn invert_relative_amplitude(r: f64) -> Result<PopulationRoots> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::domain(format!("R must lie in [0, 1], got {r}")));
    }
    let root = (1.0 - r).sqrt();
    Ok(PopulationRoots { p2: 0.5 * (1.0 - root), alternate: 0.5 * (1.0 + root) })
}

/// Time between full revivals: one Larmor period for the general scheme,
/// half a Larmor period for the diagonal schemes.
pub fn oscillation_period(
    consts: &PhysicalConstants,
    b_field_gauss: f64,
    scheme: Scheme,
) -> Result<f64> {
    let f_l = larmor_frequency(consts, b_field_gauss)?;
    if f_l == 0.0 {
        return Err(Error::DegenerateField);
    }
    Ok(match scheme {
        Scheme::Unpolarized => 1.0 / f_l,
        Scheme::SigmaPlus | Scheme::TwoLevel => 1.0 / (2.0 * f_l),
    })
}

/// Revival times `k·T` for `k = 0, 1, 2, …` up to `horizon_us` inclusive.
pub fn revival_times(
    consts: &PhysicalConstants,
    b_field_gauss: f64,
    scheme: Scheme,
    horizon_us: f64,
) -> Result<Vec<f64>> {
    if !(horizon_us > 0.0) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon_us}")));
    }
    if !(b_field_gauss > 0.0) {
        return Err(Error::DegenerateField);
    }
    let period = oscillation_period(consts, b_field_gauss, scheme)?;
    let mut times = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * period;
        if t > horizon_us {
            break;
        }
        times.push(t);
        k += 1;
    }
    Ok(times)
}

/// Extrema of the envelope-free retrieval over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrema {
    pub max: f64,
    pub min: f64,
}

/// Grid points per oscillation period used before local refinement.
const EXTREMA_GRID_PER_PERIOD: usize = 2048;

/// Locate the extrema of the envelope-free interference factor (times
/// `A(0)`) over `window`, which must span at least one oscillation period.
///
/// Dense grid search (≥ 1000 points per period) followed by golden-section
/// refinement of the bracketing intervals. The factor is periodic, so only
/// the first period of the window needs to be sampled.
pub fn oscillation_extrema(
    consts: &PhysicalConstants,
    params: &ModelParams,
    window: (f64, f64),
) -> Result<Extrema> {
    params.validate()?;
    let (start, end) = window;
    if !(start >= 0.0) || !(end > start) {
        return Err(Error::domain(format!("invalid window ({start}, {end})")));
    }
    let period = oscillation_period(consts, params.b_field_gauss, params.scheme)?;
    if end - start < period * (1.0 - 1e-9) {
        return Err(Error::WindowTooShort);
    }
    let components = phasor_components(consts, params)?;
    let eval = |t: f64| params.amplitude_scale * interference_factor(&components, t);

    let span = period.min(end - start);
    let n = EXTREMA_GRID_PER_PERIOD;
    let dt = span / n as f64;
    let mut best_max = (start, eval(start));
    let mut best_min = best_max;
    for i in 1..=n {
        let t = start + i as f64 * dt;
        let v = eval(t);
        if v > best_max.1 {
            best_max = (t, v);
        }
        if v < best_min.1 {
            best_min = (t, v);
        }
    }

    let tol = 1e-12 * period.max(1.0);
    let refine = |center: f64, maximize: bool| -> f64 {
        let lo = (center - dt).max(start);
        let hi = (center + dt).min(end);
        if maximize {
            golden_max(&eval, lo, hi, tol).1
        } else {
            -golden_max(&|t| -eval(t), lo, hi, tol).1
        }
    };
    let max = refine(best_max.0, true).max(best_max.1);
    let min = refine(best_min.0, false).min(best_min.1);
    Ok(Extrema { max, min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn envelope_examples() {
        let gauss = DecayEnvelope::Gaussian { tau_us: 440.0 };
        assert_relative_eq!(
            envelope_eval(&gauss, 440.0).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
        assert_eq!(envelope_eval(&gauss, 0.0).unwrap(), 1.0);
        assert_eq!(envelope_eval(&DecayEnvelope::None, 123.4).unwrap(), 1.0);
        let exp = DecayEnvelope::Exponential { tau_us: 100.0 };
        assert_relative_eq!(
            envelope_eval(&exp, 100.0).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn envelope_rejects_negative_time_and_tau() {
        let gauss = DecayEnvelope::Gaussian { tau_us: 10.0 };
        assert!(envelope_eval(&gauss, -1.0).is_err());
        assert!(DecayEnvelope::Gaussian { tau_us: 0.0 }.validate().is_err());
    }

    #[test]
    fn single_coherence_never_collapses() {
        // P(3,4) = 1: one phasor, unit modulus at any time and field.
        let mut w = [[0.0; N_STORAGE]; N_GROUND];
        w[(3 + GROUND_F) as usize][(4 + STORAGE_F) as usize] = 1.0;
        let params = ModelParams::unpolarized(
            CoherenceMatrix::new(w).unwrap(),
            0.7,
            DecayEnvelope::None,
            1.0,
        )
        .unwrap();
        for t in [0.0, 0.37, 5.0, 123.456] {
            assert_relative_eq!(
                retrieval_general(&consts(), t, &params).unwrap(),
                1.0,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn normalized_weights_start_at_unity() {
        let params = ModelParams::unpolarized(
            CoherenceMatrix::uniform(),
            0.161,
            DecayEnvelope::None,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(
            retrieval_general(&consts(), 0.0, &params).unwrap(),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn equal_pair_collapses_completely() {
        // p₂ = p₃ = 1/2 at 1.0 G: zeros every (2k+1)/(2·0.7) µs, full
        // revivals every 1/0.7 µs.
        let diag = DiagonalCoherences::from_unnormalized({
            let mut w = [0.0; N_GROUND];
            w[(2 + GROUND_F) as usize] = 0.5;
            w[(3 + GROUND_F) as usize] = 0.5;
            w
        })
        .unwrap();
        let params =
            ModelParams::sigma_plus(diag, 1.0, DecayEnvelope::None, 1.0).unwrap();
        let f2 = 2.0 * 0.35; // oscillation frequency, MHz
        for k in 0..4 {
            let zero = (2.0 * k as f64 + 1.0) / (2.0 * f2);
            assert!(retrieval_sigma_plus(&consts(), zero, &params).unwrap() < 1e-15);
            let revival = k as f64 / f2;
            assert_relative_eq!(
                retrieval_sigma_plus(&consts(), revival, &params).unwrap(),
                1.0,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn two_level_closed_form_extremes() {
        let c = consts();
        let none = DecayEnvelope::None;
        assert_relative_eq!(
            retrieval_two_level(&c, 0.0, 0.07, 1.0, &none, 1.0).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        // cos = −1 at half the oscillation period.
        let t_min = 1.0 / (2.0 * 2.0 * 0.35);
        assert_relative_eq!(
            retrieval_two_level(&c, t_min, 0.07, 1.0, &none, 1.0).unwrap(),
            (0.93f64 - 0.07).powi(2),
            max_relative = 1e-10
        );
        assert!(retrieval_two_level(&c, t_min, 0.5, 1.0, &none, 1.0).unwrap() < 1e-15);
        assert!(retrieval_two_level(&c, 0.0, 1.2, 1.0, &none, 1.0).is_err());
    }

    #[test]
    fn relative_amplitude_examples() {
        assert_relative_eq!(relative_amplitude(0.07).unwrap(), 0.2604, max_relative = 1e-12);
        assert_eq!(relative_amplitude(0.5).unwrap(), 1.0);
        assert_eq!(relative_amplitude(0.0).unwrap(), 0.0);
        assert!(relative_amplitude(-0.1).is_err());
        assert!(relative_amplitude(1.1).is_err());
    }

    #[test]
    fn invert_relative_amplitude_examples() {
        let roots = invert_relative_amplitude(0.25).unwrap();
        assert_relative_eq!(roots.p2, 0.5 * (1.0 - 0.75f64.sqrt()), max_relative = 1e-14);
        assert!((roots.p2 - 0.06699).abs() < 1e-5);
        assert_relative_eq!(roots.alternate, 1.0 - roots.p2, max_relative = 1e-14);
        assert_eq!(invert_relative_amplitude(1.0).unwrap().p2, 0.5);
        assert_eq!(invert_relative_amplitude(0.0).unwrap().p2, 0.0);
        assert!(invert_relative_amplitude(1.5).is_err());
    }

    #[test]
    fn revival_time_grids() {
        let c = consts();
        let unpol = revival_times(&c, 0.161, Scheme::Unpolarized, 60.0).unwrap();
        let larmor_period = 1.0 / (0.35 * 0.161);
        assert_eq!(unpol.len(), 4);
        for (k, t) in unpol.iter().enumerate() {
            assert_relative_eq!(*t, k as f64 * larmor_period, max_relative = 1e-12);
        }
        assert!((unpol[1] - 17.75).abs() < 0.05);
        assert!((unpol[3] - 53.24).abs() < 0.05);

        let sigma = revival_times(&c, 1.0, Scheme::SigmaPlus, 3.0).unwrap();
        assert_eq!(sigma.len(), 3);
        assert_relative_eq!(sigma[1], 1.0 / 0.7, max_relative = 1e-12);
        assert_relative_eq!(sigma[2], 2.0 / 0.7, max_relative = 1e-12);
        assert_eq!(sigma[0], 0.0);

        assert!(matches!(
            revival_times(&c, 0.0, Scheme::SigmaPlus, 10.0),
            Err(Error::DegenerateField)
        ));
    }

    #[test]
    fn extrema_match_two_level_closed_form() {
        let c = consts();
        let params = ModelParams::two_level(0.07, 1.0, DecayEnvelope::None, 1.0).unwrap();
        let period = oscillation_period(&c, 1.0, Scheme::TwoLevel).unwrap();
        let ext = oscillation_extrema(&c, &params, (0.0, 2.0 * period)).unwrap();
        assert_relative_eq!(ext.max, 1.0, max_relative = 1e-9);
        assert_relative_eq!(ext.min, 0.86f64.powi(2), max_relative = 1e-9);
    }

    #[test]
    fn extrema_single_coherence_flat() {
        let c = consts();
        let params = ModelParams::sigma_plus(
            DiagonalCoherences::pure(3).unwrap(),
            1.0,
            DecayEnvelope::None,
            1.0,
        )
        .unwrap();
        let ext = oscillation_extrema(&c, &params, (0.0, 5.0)).unwrap();
        assert_relative_eq!(ext.max, 1.0, max_relative = 1e-12);
        assert_relative_eq!(ext.min, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn extrema_reject_short_window() {
        let c = consts();
        let params = ModelParams::two_level(0.1, 1.0, DecayEnvelope::None, 1.0).unwrap();
        // Period at 1.0 G is 1/0.7 ≈ 1.43 µs.
        assert!(matches!(
            oscillation_extrema(&c, &params, (0.0, 1.0)),
            Err(Error::WindowTooShort)
        ));
    }

    #[test]
    fn matrix_validation() {
        // Forbidden entry.
        let mut w = [[0.0; N_STORAGE]; N_GROUND];
        w[(0 + GROUND_F) as usize][(3 + STORAGE_F) as usize] = 1.0;
        assert!(CoherenceMatrix::new(w).is_err());
        // Bad normalization.
        let mut w = [[0.0; N_STORAGE]; N_GROUND];
        w[(3 + GROUND_F) as usize][(4 + STORAGE_F) as usize] = 0.5;
        assert!(CoherenceMatrix::new(w).is_err());
        // Negative weight.
        let mut w = [[0.0; N_STORAGE]; N_GROUND];
        w[(3 + GROUND_F) as usize][(4 + STORAGE_F) as usize] = 1.5;
        w[(2 + GROUND_F) as usize][(3 + STORAGE_F) as usize] = -0.5;
        assert!(CoherenceMatrix::new(w).is_err());
        assert!(CoherenceMatrix::new(CoherenceMatrix::uniform().weights).is_ok());
    }

    #[test]
    fn scheme_representation_must_match() {
        let diag = DiagonalCoherences::pure(3).unwrap();
        let params = ModelParams {
            scheme: Scheme::Unpolarized,
            coherences: Coherences::Diagonal(diag),
            b_field_gauss: 1.0,
            envelope: DecayEnvelope::None,
            amplitude_scale: 1.0,
        };
        assert!(params.validate().is_err());
    }
}
