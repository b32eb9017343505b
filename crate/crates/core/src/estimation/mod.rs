//! Synthetic retrieval curves, spectral initialization, nonlinear
//! least-squares fitting and stray-field estimation.
//!
//! Everything here is a pure function of its inputs (the noise seed
//! included), so independent fits and multi-seed studies can run
//! concurrently without shared state.

mod lm;

use std::f64::consts::TAU;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::interference::{
    invert_relative_amplitude, retrieval, retrieval_general, CoherenceMatrix, Coherences,
    DecayEnvelope, DiagonalCoherences, ModelParams,
};
use crate::zeeman::{PhysicalConstants, Scheme};
use lm::{levenberg_marquardt, LmOptions};

/// One sample of a retrieval curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t_us: f64,
    pub amplitude: f64,
    /// Optional 1-σ uncertainty of the amplitude.
    pub sigma: Option<f64>,
}

/// Sampled storage-time → retrieval-amplitude data.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalCurve {
    points: Vec<CurvePoint>,
}

impl RetrievalCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for (i, p) in points.iter().enumerate() {
            if !p.t_us.is_finite() || !p.amplitude.is_finite() {
                return Err(Error::validation(format!("non-finite sample at index {i}")));
            }
            if p.amplitude < 0.0 {
                return Err(Error::validation(format!(
                    "amplitude must be non-negative, got {} at t = {}",
                    p.amplitude, p.t_us
                )));
            }
            if let Some(s) = p.sigma {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::validation(format!(
                        "sigma must be positive, got {s} at t = {}",
                        p.t_us
                    )));
                }
            }
            if i > 0 && p.t_us <= points[i - 1].t_us {
                return Err(Error::validation(format!(
                    "times must be strictly increasing at index {i}"
                )));
            }
        }
        Ok(RetrievalCurve { points })
    }

    pub fn from_samples(times: &[f64], amplitudes: &[f64]) -> Result<Self> {
        if times.len() != amplitudes.len() {
            return Err(Error::validation("times and amplitudes differ in length".to_string()));
        }
        RetrievalCurve::new(
            times
                .iter()
                .zip(amplitudes)
                .map(|(&t_us, &amplitude)| CurvePoint { t_us, amplitude, sigma: None })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t_us).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.amplitude).collect()
    }
}

/// Noise model for synthetic curves: per-point Gaussian noise with
/// `sd = relative_sigma·model + floor_sigma`, clipped at zero amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub relative_sigma: f64,
    pub floor_sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec { relative_sigma: 0.0, floor_sigma: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_sigma >= 0.0) || !(self.floor_sigma >= 0.0) {
            return Err(Error::validation(format!(
                "noise sigmas must be non-negative, got {} and {}",
                self.relative_sigma, self.floor_sigma
            )));
        }
        Ok(())
    }
}

/// Inclusive uniform time grid with `n ≥ 2` points.
pub fn time_grid(t0_us: f64, t1_us: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::domain(format!("grid needs at least 2 points, got {n}")));
    }
    if !(t0_us >= 0.0) || !(t1_us > t0_us) {
        return Err(Error::domain(format!("invalid grid range [{t0_us}, {t1_us}]")));
    }
    let step = (t1_us - t0_us) / (n - 1) as f64;
    Ok((0..n).map(|i| t0_us + i as f64 * step).collect())
}

/// Evaluate the model on a time grid and add seeded Gaussian noise.
/// Identical seeds produce bit-identical curves.
pub fn synthesize_curve(
    consts: &PhysicalConstants,
    params: &ModelParams,
    times: &[f64],
    noise: &NoiseSpec,
) -> Result<RetrievalCurve> {
    if times.is_empty() {
        return Err(Error::EmptyGrid);
    }
    noise.validate()?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut points = Vec::with_capacity(times.len());
    for &t_us in times {
        let model = retrieval(consts, t_us, params)?;
        let sd = noise.relative_sigma * model + noise.floor_sigma;
        let (amplitude, sigma) = if sd > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            ((model + sd * z).max(0.0), Some(sd))
        } else {
            (model, None)
        };
        points.push(CurvePoint { t_us, amplitude, sigma });
    }
    RetrievalCurve::new(points)
}

const MIN_SPECTRUM_POINTS: usize = 32;
/// The peak search starts at bin 3: the precondition requires three full
/// periods in the window, and the first bins hold the envelope trend.
const MIN_PEAK_BIN: usize = 3;
/// Peak must exceed this multiple of the median magnitude to count as an
/// oscillation rather than spectral floor.
const PEAK_TO_MEDIAN: f64 = 5.0;
/// A lower-frequency local maximum at least this large relative to the
/// global peak is taken as the fundamental (harmonics of the revival comb
/// can carry equal weight).
const FUNDAMENTAL_FRACTION: f64 = 0.7;

struct SpectralPeak {
    frequency_mhz: f64,
    /// A narrow line rather than a broad trend lobe: the magnitude three
    /// bins out on both sides is far below the peak.
    sharp: bool,
}

/// Hann-windowed magnitude spectrum peak of the mean-subtracted signal.
fn dominant_peak(curve: &RetrievalCurve) -> Result<SpectralPeak> {
    let n = curve.len();
    if n < MIN_SPECTRUM_POINTS {
        return Err(Error::domain(format!(
            "need at least {MIN_SPECTRUM_POINTS} uniformly spaced points, got {n}"
        )));
    }
    let times = curve.times();
    let dt = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::NonUniformGrid);
        }
    }
    let amps = curve.amplitudes();
    let mean = amps.iter().sum::<f64>() / n as f64;
    let total_dev: f64 = amps.iter().map(|a| (a - mean).abs()).sum();
    let max_dev = amps.iter().map(|a| (a - mean).abs()).fold(0.0f64, f64::max);
    if max_dev <= 1e-12 * (1.0 + mean.abs()) {
        return Err(Error::NoOscillation);
    }

    // The Hann window keeps the slow decay trend from leaking across the
    // whole spectrum and burying the oscillation line.
    let mut buf: Vec<Complex<f64>> = amps
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let w = 0.5 * (1.0 - (TAU * i as f64 / (n - 1) as f64).cos());
            Complex::new((a - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    if half <= MIN_PEAK_BIN + 1 {
        return Err(Error::NoOscillation);
    }
    let mags: Vec<f64> = buf[..half].iter().map(|c| c.norm()).collect();

    let mut peak_bin = MIN_PEAK_BIN;
    for k in MIN_PEAK_BIN..half {
        if mags[k] > mags[peak_bin] {
            peak_bin = k;
        }
    }
    let mut sorted: Vec<f64> = mags[MIN_PEAK_BIN..].to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    // Absolute floor: a real oscillation carries a non-negligible share of
    // the total signal deviation.
    if mags[peak_bin] < PEAK_TO_MEDIAN * median || mags[peak_bin] < 1e-5 * total_dev {
        return Err(Error::NoOscillation);
    }

    // Prefer the lowest-frequency local maximum comparable to the peak (the
    // revival comb can put equal weight on harmonics of f_L), but never a
    // bin on the decaying shoulder of the low-frequency trend.
    for k in MIN_PEAK_BIN..peak_bin {
        let local_max = mags[k] >= mags[k - 1] && mags[k] >= mags[k + 1];
        let off_trend = mags[k.saturating_sub(2).max(1)] <= mags[k];
        if local_max && off_trend && mags[k] >= FUNDAMENTAL_FRACTION * mags[peak_bin] {
            peak_bin = k;
            break;
        }
    }

    let lo = peak_bin.saturating_sub(3).max(1);
    let hi = (peak_bin + 3).min(half - 1);
    let sharp = mags[lo] <= 0.25 * mags[peak_bin] && mags[hi] <= 0.25 * mags[peak_bin];

    let delta = if peak_bin + 1 < half {
        let alpha = mags[peak_bin - 1];
        let beta = mags[peak_bin];
        let gamma = mags[peak_bin + 1];
        let denom = alpha - 2.0 * beta + gamma;
        if denom.abs() > 0.0 {
            (0.5 * (alpha - gamma) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(SpectralPeak {
        frequency_mhz: (peak_bin as f64 + delta) / (n as f64 * dt),
        sharp,
    })
}

/// Frequency (MHz) of the dominant oscillation of a uniformly sampled
/// curve: FFT magnitude peak of the mean-subtracted signal with parabolic
/// interpolation around the peak bin. For σ⁺ two-coherence data this is
/// `2·f_L`.
pub fn dominant_frequency(curve: &RetrievalCurve) -> Result<f64> {
    Ok(dominant_peak(curve)?.frequency_mhz)
}

/// Width of the FFT bin (MHz) the estimate above is accurate to.
pub fn frequency_resolution(curve: &RetrievalCurve) -> Result<f64> {
    let n = curve.len();
    if n < 2 {
        return Err(Error::EmptyGrid);
    }
    let times = curve.times();
    Ok(1.0 / (n as f64 * (times[1] - times[0])))
}

fn median3(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 3 {
        return values.to_vec();
    }
    let mut out = values.to_vec();
    for i in 1..n - 1 {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        out[i] = a.max(b).min(a.min(b).max(c));
    }
    out
}

/// Local maxima of the median-filtered curve, as `(t, amplitude)`: points
/// strictly greater than the nearest differing values on both sides (the
/// filter turns crests into short plateaus, reported at their center).
/// Includes the left boundary when the curve starts on a descent.
fn local_maxima(times: &[f64], smoothed: &[f64]) -> Vec<(f64, f64)> {
    let n = smoothed.len();
    let mut maxima = Vec::new();
    if n >= 2 && smoothed[0] > smoothed[1] {
        maxima.push((times[0], smoothed[0]));
    }
    let mut i = 1;
    while i + 1 < n {
        if smoothed[i] > smoothed[i - 1] {
            let mut j = i;
            while j + 1 < n && smoothed[j + 1] == smoothed[i] {
                j += 1;
            }
            if j + 1 < n && smoothed[j + 1] < smoothed[i] {
                let mid = (i + j) / 2;
                maxima.push((times[mid], smoothed[mid]));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    maxima
}

/// 1/e lifetime from `ln a = ln A₀ − t²/τ²` over the revival maxima;
/// `f64::INFINITY` when the maxima do not decay significantly (slope not
/// negative at the 2-σ level of the regression).
fn tau_from_maxima(maxima: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        maxima.iter().filter(|(_, a)| *a > 0.0).map(|&(t, a)| (t * t, a.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let var: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if var == 0.0 {
        return None;
    }
    let cov: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = cov / var;
    let sigma_slope = if pts.len() > 2 {
        let ss_res: f64 = pts
            .iter()
            .map(|p| (p.1 - mean_y - slope * (p.0 - mean_x)).powi(2))
            .sum();
        (ss_res / (n - 2.0) / var).sqrt()
    } else {
        0.0
    };
    if slope < -(2.0 * sigma_slope).max(1e-300) {
        Some((-1.0 / slope).sqrt())
    } else {
        Some(f64::INFINITY)
    }
}

/// First interpolated crossing of `smoothed` below `level`, if any.
fn first_crossing_below(times: &[f64], smoothed: &[f64], level: f64) -> Option<f64> {
    for i in 1..smoothed.len() {
        if smoothed[i] < level && smoothed[i - 1] >= level {
            let (a0, a1) = (smoothed[i - 1], smoothed[i]);
            let frac = if a0 > a1 { (a0 - level) / (a0 - a1) } else { 1.0 };
            return Some(times[i - 1] + frac * (times[i] - times[i - 1]));
        }
    }
    None
}

/// Time at which the uniform-weight interference factor first drops to
/// half, for unit Larmor frequency. Scales as `1/f_L`.
fn uniform_collapse_half_time() -> f64 {
    static HALF_TIME: OnceLock<f64> = OnceLock::new();
    *HALF_TIME.get_or_init(|| {
        let consts = PhysicalConstants::default();
        let b_unit = 1.0 / consts.g_factor_mhz_per_gauss; // f_L = 1 MHz
        let params = ModelParams::unpolarized(
            CoherenceMatrix::uniform(),
            b_unit,
            DecayEnvelope::None,
            1.0,
        )
        .expect("uniform matrix is valid");
        let eval = |t: f64| retrieval_general(&consts, t, &params).expect("valid params");
        let mut lo = 0.0;
        let mut t = 0.0;
        while eval(t) >= 0.5 {
            lo = t;
            t += 0.005;
        }
        let mut hi = t;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if eval(mid) >= 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

/// Data-driven starting point for [`fit_curve`].
///
/// The field comes from the dominant spectral frequency (or, for
/// unpolarized curves without resolvable oscillations, from the width of
/// the initial collapse), the lifetime from a log-Gaussian fit to the
/// sequence of revival maxima (`f64::INFINITY` when the curve does not
/// decay), the amplitude from the first maximum and `p₂` from the
/// early-time extrema ratio.
pub fn initial_guess(
    consts: &PhysicalConstants,
    curve: &RetrievalCurve,
    scheme: Scheme,
) -> Result<ModelParams> {
    consts.validate()?;
    if curve.len() < 4 {
        return Err(Error::domain(format!("need at least 4 points, got {}", curve.len())));
    }
    let times = curve.times();
    let smoothed = median3(&curve.amplitudes());
    let maxima = local_maxima(&times, &smoothed);

    let first_max = maxima.first().copied();
    let a0 = first_max
        .map(|(_, a)| a)
        .unwrap_or_else(|| smoothed.iter().fold(0.0f64, |acc, v| acc.max(*v)));
    if !(a0 > 0.0) {
        return Err(Error::validation("curve carries no signal".to_string()));
    }

    let tau = tau_from_maxima(&maxima).unwrap_or_else(|| {
        first_crossing_below(&times, &smoothed, a0 / std::f64::consts::E)
            .unwrap_or(f64::INFINITY)
    });
    let envelope = DecayEnvelope::Gaussian { tau_us: tau };

    let g = consts.g_factor_mhz_per_gauss;
    let span = times[times.len() - 1] - times[0];
    let peak = dominant_peak(curve).ok();

    match scheme {
        Scheme::Unpolarized => {
            // Only a sharp spectral line is a revival comb; otherwise fall
            // back on the width of the initial collapse, which scales as
            // the inverse Larmor frequency for uniform weights.
            let f_larmor = match &peak {
                Some(p) if p.sharp => p.frequency_mhz,
                _ => {
                    let half = first_crossing_below(&times, &smoothed, 0.5 * a0);
                    match half {
                        Some(t_half) if t_half > 0.0 => {
                            uniform_collapse_half_time() / t_half
                        }
                        _ => 0.25 / span,
                    }
                }
            };
            ModelParams::unpolarized(
                CoherenceMatrix::uniform(),
                (f_larmor / g).max(1e-9),
                envelope,
                a0,
            )
        }
        Scheme::SigmaPlus | Scheme::TwoLevel => {
            // Without a resolvable oscillation the curve never dips, so the
            // minority coherence starts at zero.
            let (b, p2) = match peak.as_ref().map(|p| p.frequency_mhz) {
                None => ((1.0 / span) / (2.0 * g), 0.0),
                Some(f_osc) => {
                    let b = (f_osc / (2.0 * g)).max(1e-9);
                    // Detrended extrema over the first ~1.5 oscillation
                    // periods; removing the local linear trend keeps the
                    // envelope decay out of the oscillation amplitude.
                    let window_end = times[0] + 1.5 / f_osc;
                    let window: Vec<(f64, f64)> = times
                        .iter()
                        .zip(&smoothed)
                        .take_while(|(t, _)| **t <= window_end)
                        .map(|(t, a)| (*t, *a))
                        .collect();
                    let hi = window.iter().map(|p| p.1).fold(0.0f64, f64::max);
                    let r = if window.len() >= 4 && hi > 0.0 {
                        let nw = window.len() as f64;
                        let mx = window.iter().map(|p| p.0).sum::<f64>() / nw;
                        let my = window.iter().map(|p| p.1).sum::<f64>() / nw;
                        let var: f64 = window.iter().map(|p| (p.0 - mx).powi(2)).sum();
                        let cov: f64 =
                            window.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                        let slope = if var > 0.0 { cov / var } else { 0.0 };
                        let (mut osc_hi, mut osc_lo) = (f64::NEG_INFINITY, f64::INFINITY);
                        for (t, a) in &window {
                            let detrended = a - (my + slope * (t - mx));
                            osc_hi = osc_hi.max(detrended);
                            osc_lo = osc_lo.min(detrended);
                        }
                        ((osc_hi - osc_lo) / hi).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    (b, invert_relative_amplitude(r)?.p2)
                }
            };
            match scheme {
                Scheme::TwoLevel => ModelParams::two_level(p2, b, envelope, a0),
                _ => ModelParams::sigma_plus(
                    DiagonalCoherences::two_level(p2)?,
                    b,
                    envelope,
                    a0,
                ),
            }
        }
    }
}

/// Box bounds for the free parameters of a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitBounds {
    pub amplitude: (f64, f64),
    pub p2: (f64, f64),
    pub b_gauss: (f64, f64),
    pub tau_us: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        FitBounds {
            amplitude: (0.0, f64::INFINITY),
            p2: (0.0, 1.0),
            b_gauss: (1e-9, f64::INFINITY),
            tau_us: (1e-3, f64::INFINITY),
        }
    }
}

/// Canonical free-parameter names, in fit order.
pub const PARAM_AMPLITUDE: &str = "amplitude";
pub const PARAM_P2: &str = "p2";
pub const PARAM_B: &str = "b_gauss";
pub const PARAM_TAU: &str = "tau_us";

/// Outcome of a least-squares fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Names of the fitted parameters, in the order used by `covariance`.
    pub free_parameters: Vec<&'static str>,
    /// Row-major covariance of the free parameters; `None` when the
    /// Jacobian was degenerate at the optimum.
    pub covariance: Option<Vec<f64>>,
    /// Weighted sum of squared residuals at the optimum.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    fn index_of(&self, name: &str) -> Option<usize> {
        self.free_parameters.iter().position(|p| *p == name)
    }

    /// Fitted value of a free parameter by name.
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index_of(name)?;
        match name {
            PARAM_AMPLITUDE => Some(self.params.amplitude_scale),
            PARAM_B => Some(self.params.b_field_gauss),
            PARAM_TAU => self.params.envelope.tau_us(),
            PARAM_P2 => match &self.params.coherences {
                Coherences::Diagonal(d) => Some(d.get(2)),
                Coherences::Matrix(_) => None,
            },
            _ => None,
        }
    }

    /// 1-σ uncertainty of a free parameter by name.
    pub fn sigma(&self, name: &str) -> Option<f64> {
        let j = self.index_of(name)?;
        let cov = self.covariance.as_ref()?;
        let k = self.free_parameters.len();
        let var = cov[j * k + j];
        if var >= 0.0 {
            Some(var.sqrt())
        } else {
            None
        }
    }
}

#[derive(Clone, Copy)]
enum LawKind {
    Gaussian,
    Exponential,
    Flat,
}

fn law_of(envelope: &DecayEnvelope) -> LawKind {
    match envelope {
        DecayEnvelope::Gaussian { .. } => LawKind::Gaussian,
        DecayEnvelope::Exponential { .. } => LawKind::Exponential,
        DecayEnvelope::None => LawKind::Flat,
    }
}

fn envelope_unchecked(law: LawKind, tau: f64, t: f64) -> f64 {
    match law {
        LawKind::Gaussian => (-(t / tau).powi(2)).exp(),
        LawKind::Exponential => (-t / tau).exp(),
        LawKind::Flat => 1.0,
    }
}

/// Model family evaluated inside the fit loop without validation, so that
/// finite-difference probes just outside the box remain well-defined.
enum FitModel {
    /// Two coherences on `m = 2, 3`; parameters `[a0, p2, B(, τ)]`.
    TwoCoherence { law: LawKind },
    /// Fixed coherence-matrix shape; parameters `[a0, B(, τ)]`.
    FixedMatrix { components: Vec<(f64, f64)>, law: LawKind },
}

impl FitModel {
    fn eval(&self, g: f64, x: &[f64], t: f64) -> f64 {
        match self {
            FitModel::TwoCoherence { law } => {
                let (a0, p2, b) = (x[0], x[1], x[2]);
                let tau = x.get(3).copied().unwrap_or(f64::INFINITY);
                let p3 = 1.0 - p2;
                let osc = p3 * p3 + p2 * p2 + 2.0 * p2 * p3 * (TAU * 2.0 * g * b * t).cos();
                a0 * osc * envelope_unchecked(*law, tau, t)
            }
            FitModel::FixedMatrix { components, law } => {
                let (a0, b) = (x[0], x[1]);
                let tau = x.get(2).copied().unwrap_or(f64::INFINITY);
                let f_l = g * b;
                let mut re = 0.0;
                let mut im = 0.0;
                for &(s, w) in components {
                    let phase = TAU * s * f_l * t;
                    re += w * phase.cos();
                    im += w * phase.sin();
                }
                a0 * (re * re + im * im) * envelope_unchecked(*law, tau, t)
            }
        }
    }
}

/// Per-point weights: supplied uncertainties where present, otherwise
/// `max(0.05·a, 0.01·max a)`, mirroring relative photodiode noise over a
/// floor.
fn fit_sigmas(curve: &RetrievalCurve) -> Result<Vec<f64>> {
    let max_a = curve.points().iter().map(|p| p.amplitude).fold(0.0f64, f64::max);
    if !(max_a > 0.0) {
        return Err(Error::validation("curve carries no signal".to_string()));
    }
    Ok(curve
        .points()
        .iter()
        .map(|p| p.sigma.unwrap_or_else(|| (0.05 * p.amplitude).max(0.01 * max_a)))
        .collect())
}

/// Weighted nonlinear least-squares fit of the retrieval model.
///
/// Damped least-squares descent with central-difference Jacobians,
/// box bounds (`p₂ ∈ [0, 1]`, `B > 0`, `τ > 0`) and three deterministic
/// starts perturbed around the initial guess; the lowest residual wins.
/// Non-convergence is reported through `converged = false`, not an error.
pub fn fit_curve(
    consts: &PhysicalConstants,
    curve: &RetrievalCurve,
    scheme: Scheme,
    guess: Option<ModelParams>,
    bounds: Option<FitBounds>,
) -> Result<FitResult> {
    consts.validate()?;
    let guess = match guess {
        Some(g) => {
            g.validate()?;
            if g.scheme != scheme {
                return Err(Error::validation(format!(
                    "guess scheme {} does not match requested scheme {}",
                    g.scheme.name(),
                    scheme.name()
                )));
            }
            g
        }
        None => initial_guess(consts, curve, scheme)?,
    };
    let bounds = bounds.unwrap_or_default();
    let law = law_of(&guess.envelope);
    let fit_tau = !matches!(law, LawKind::Flat);
    let span = {
        let times = curve.times();
        times[times.len() - 1] - times[0]
    };
    let tau_start = match guess.envelope.tau_us() {
        Some(t) if t.is_finite() => t.clamp(bounds.tau_us.0, bounds.tau_us.1),
        _ => span.max(bounds.tau_us.0),
    };

    let (model, mut x0, mut names, mut lo, mut hi) = match scheme {
        Scheme::SigmaPlus | Scheme::TwoLevel => {
            let p2_start = match &guess.coherences {
                Coherences::Diagonal(d) => {
                    let (w2, w3) = (d.get(2), d.get(3));
                    if w2 + w3 > 0.0 {
                        w2 / (w2 + w3)
                    } else {
                        0.0
                    }
                }
                Coherences::Matrix(_) => 0.0,
            };
            (
                FitModel::TwoCoherence { law },
                vec![guess.amplitude_scale, p2_start, guess.b_field_gauss],
                vec![PARAM_AMPLITUDE, PARAM_P2, PARAM_B],
                vec![bounds.amplitude.0, bounds.p2.0, bounds.b_gauss.0],
                vec![bounds.amplitude.1, bounds.p2.1, bounds.b_gauss.1],
            )
        }
        Scheme::Unpolarized => {
            let matrix = match &guess.coherences {
                Coherences::Matrix(m) => m.clone(),
                Coherences::Diagonal(d) => CoherenceMatrix::from_diagonal(d),
            };
            let components: Vec<(f64, f64)> = matrix
                .diagonal_sums()
                .into_iter()
                .map(|(s, w)| (f64::from(s), w))
                .collect();
            (
                FitModel::FixedMatrix { components, law },
                vec![guess.amplitude_scale, guess.b_field_gauss],
                vec![PARAM_AMPLITUDE, PARAM_B],
                vec![bounds.amplitude.0, bounds.b_gauss.0],
                vec![bounds.amplitude.1, bounds.b_gauss.1],
            )
        }
    };
    if fit_tau {
        x0.push(tau_start);
        names.push(PARAM_TAU);
        lo.push(bounds.tau_us.0);
        hi.push(bounds.tau_us.1);
    }

    let n = curve.len();
    if n < x0.len() + 2 {
        return Err(Error::domain(format!(
            "need at least {} points for {} free parameters, got {n}",
            x0.len() + 2,
            x0.len()
        )));
    }
    let sigmas = fit_sigmas(curve)?;
    let points = curve.points().to_vec();
    let g = consts.g_factor_mhz_per_gauss;
    let residual_fn = |x: &[f64], out: &mut [f64]| {
        for (i, p) in points.iter().enumerate() {
            out[i] = (p.amplitude - model.eval(g, x, p.t_us)) / sigmas[i];
        }
    };

    // The cost oscillates in B with basins spaced by one phase cycle over
    // the data span, so scan the field axis around the guess first and
    // start the descent from the three best distinct basins.
    let b_idx = names.iter().position(|n| *n == PARAM_B).expect("B is always free");
    let tau_idx = names.iter().position(|n| *n == PARAM_TAU);
    let cycle = match scheme {
        Scheme::Unpolarized => 1.0 / (g * span),
        _ => 1.0 / (2.0 * g * span),
    };
    let b_guess = x0[b_idx];
    let mut candidates: Vec<f64> = Vec::new();
    for k in -10..=10i32 {
        candidates.push(b_guess + 0.25 * cycle * f64::from(k));
    }
    for i in 0..=20 {
        candidates.push(b_guess * (0.7 + 0.03 * i as f64));
    }
    candidates.retain(|b| b.is_finite() && *b >= lo[b_idx] && *b <= hi[b_idx]);
    if candidates.is_empty() {
        candidates.push(b_guess.clamp(lo[b_idx], hi[b_idx]));
    }
    let mut residuals = vec![0.0; n];
    let mut scored: Vec<(f64, f64)> = candidates
        .into_iter()
        .map(|b| {
            let mut probe = x0.clone();
            probe[b_idx] = b;
            residual_fn(&probe, &mut residuals);
            (residuals.iter().map(|r| r * r).sum::<f64>(), b)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for (_, b) in &scored {
        if starts.len() >= 3 {
            break;
        }
        // One start per basin.
        if starts.iter().all(|s| (s[b_idx] - b).abs() > 0.4 * cycle) {
            let mut s = x0.clone();
            s[b_idx] = *b;
            starts.push(s);
        }
    }
    if let Some(j) = tau_idx {
        for s in &mut starts {
            s[j] = s[j].clamp(bounds.tau_us.0, span * 100.0);
        }
    }

    let opts = LmOptions::default();
    let mut best: Option<lm::LmOutcome> = None;
    for start in &starts {
        let outcome = levenberg_marquardt(&residual_fn, n, start, &lo, &hi, &opts);
        if best.as_ref().is_none_or(|b| outcome.cost < b.cost) {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one start");

    let x = &best.x;
    let a0 = x[0];
    let b_fit = x[b_idx];
    let envelope = if fit_tau {
        guess.envelope.with_tau(x[tau_idx.expect("tau index set")])
    } else {
        DecayEnvelope::None
    };
    let params = match scheme {
        Scheme::TwoLevel => ModelParams::two_level(x[1].clamp(0.0, 1.0), b_fit, envelope, a0)?,
        Scheme::SigmaPlus => ModelParams::sigma_plus(
            DiagonalCoherences::two_level(x[1].clamp(0.0, 1.0))?,
            b_fit,
            envelope,
            a0,
        )?,
        Scheme::Unpolarized => {
            let matrix = match &guess.coherences {
                Coherences::Matrix(m) => m.clone(),
                Coherences::Diagonal(d) => CoherenceMatrix::from_diagonal(d),
            };
            ModelParams::unpolarized(matrix, b_fit, envelope, a0)?
        }
    };

    Ok(FitResult {
        params,
        free_parameters: names,
        covariance: best.covariance,
        residual_norm: best.cost,
        converged: best.converged,
        iterations: best.iterations,
    })
}

/// Stray-field estimate with its 1-σ confidence interval.
#[derive(Debug, Clone)]
pub struct StrayFieldEstimate {
    pub b_gauss: f64,
    pub sigma_gauss: f64,
    pub interval_gauss: (f64, f64),
    pub fit: FitResult,
}

/// Estimate a small residual field from the initial collapse of an
/// unpolarized retrieval curve: the general model with a uniform allowed
/// coherence matrix is fitted with `B` free, and the collapse width pins
/// the field. Fields not significant against their own uncertainty are
/// rejected as indistinguishable from zero.
pub fn estimate_stray_field(
    consts: &PhysicalConstants,
    curve: &RetrievalCurve,
) -> Result<StrayFieldEstimate> {
    let fit = fit_curve(consts, curve, Scheme::Unpolarized, None, None)?;
    let b = fit.params.b_field_gauss;
    let sigma = match fit.sigma(PARAM_B) {
        Some(s) if s.is_finite() => s,
        _ => return Err(Error::FieldIndistinguishable),
    };
    if b <= 2.0 * sigma {
        return Err(Error::FieldIndistinguishable);
    }
    Ok(StrayFieldEstimate {
        b_gauss: b,
        sigma_gauss: sigma,
        interval_gauss: (b - sigma, b + sigma),
        fit,
    })
}
