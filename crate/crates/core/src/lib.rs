//! Probe-based tomography of a single harmonic-oscillator mode.
//!
//! A two-level probe coupled to the oscillator through `σ_x (αX + βP)` has a
//! `⟨σ_z⟩` signal equal to the characteristic function of the oscillator
//! state. This crate simulates those signals, including shot noise and
//! detector error, and inverts them:
//!
//! * [`pure_recon`] recovers `|ψ(x)|²` by inverse Fourier transform and the
//!   full complex `ψ(x)` (or `ψ(p)`) by integrating its logarithmic
//!   derivative.
//! * [`mixed_recon`] estimates every density-matrix element `c_{n,m}` from
//!   signals taken after different free-evolution phases.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod mixed_recon;
pub mod pure_recon;
pub mod response;
pub mod statespace;

pub use error::{Result, TomoError};
pub use experiment::{debias, sample_signal, ShotConfig};
pub use mixed_recon::{build_design_matrix, fidelity, solve_density_matrix, DesignMatrix, SolveOptions};
pub use pure_recon::{
    compute_g, integrate_phase, reconstruct_pure, recover_density_profile, ComplexProfile, DensityProfile, PureOptions,
};
pub use response::{
    displacement_element, pz_even, pz_even_rotated, pz_odd, pz_odd_rotated, pz_tilde, ExperimentSetting, KGrid,
    Representation, SignalKind, SignalSeries,
};
pub use statespace::{depolarize, hermite_wavefunction, make_standard_state, DensityMatrix, FockState, PositionGrid};
