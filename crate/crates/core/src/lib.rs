//! Collapse-and-revival dynamics of a cold-atom EIT quantum memory.
//!
//! When light is stored in a cloud of cesium atoms inside a magnetic field,
//! the Zeeman-split ground sublevels host several spin-wave coherences that
//! precess at different multiples of the Larmor frequency. Their interference
//! makes the retrieval efficiency collapse and revive as a function of
//! storage time. This crate models those dynamics and the analyses built on
//! top of them:
//!
//! - [`zeeman`]: level structure, Larmor frequency, spin-wave detunings and
//!   the two-photon selection rule;
//! - [`interference`]: the retrieval-amplitude model (general, σ⁺-diagonal
//!   and two-coherence forms), decay envelopes and revival times;
//! - [`populations`]: mapping of optical-pumping quality and control-beam
//!   detuning to effective coherence weights;
//! - [`dephasing`]: lifetime estimators for field gradients and atomic
//!   motion;
//! - [`estimation`]: synthetic curves, FFT initialization, nonlinear
//!   least-squares fitting and stray-field estimation;
//! - [`scan`]: detuning/field parameter scans and detuning optimization.
//!
//! Units are Gauss for magnetic fields, MHz for (ordinary, not angular)
//! frequencies and microseconds for times; phases are `2π·f·t`.

pub mod dephasing;
mod error;
pub mod estimation;
pub mod interference;
pub mod populations;
pub mod scan;
mod search;
pub mod zeeman;

pub use error::{Error, Result};
pub use interference::{
    Coherences, CoherenceMatrix, DecayEnvelope, DiagonalCoherences, ModelParams,
};
pub use zeeman::{PhysicalConstants, Scheme};
