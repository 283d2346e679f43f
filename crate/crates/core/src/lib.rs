//! Simulation and analysis toolkit for quantum heterodyne ("Qdyne") spectroscopy
//! with a single two-level sensor.
//!
//! The crate is organised bottom-up:
//!
//! * [`physics`]: closed-form two-level dynamics under a near-resonant drive and
//!   the contrast / phase-shift formulas derived from it.
//! * [`lo`]: the sequence-timing local oscillator, beat notes and aliasing.
//! * [`trace`]: per-sequence population series, photon sampling and the binary
//!   trace file format.
//! * [`spectral`]: FFT, Lorentzian peak fitting and frequency / amplitude / phase
//!   reconstruction with confidence intervals.
//! * [`ambiguity`]: sign, alias and amplitude-branch disambiguation using a second
//!   measurement with modified parameters.

pub mod ambiguity;
pub mod lo;
pub mod physics;
pub mod spectral;
pub mod trace;

pub use lo::{BeatNote, LocalOscillator};
pub use physics::{InteractionParams, Sensor, SignalField};
pub use spectral::{LorentzianFit, ReconstructionResult, Spectrum};
pub use trace::{PhotonTrace, SequenceConfig, SignalMode};
