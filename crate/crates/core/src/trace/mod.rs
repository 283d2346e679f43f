//! Per-sequence measurement records.
//!
//! Sequence `k` samples the signal at phase `φ₀ + k·Δφ` where `Δφ` is the sawtooth
//! increment of the local oscillator. The |1⟩ population after each sequence sets
//! the Poisson mean of the photons accepted in the readout window.

mod io;

pub use io::{read_trace, trace_from_bytes, trace_to_bytes, write_trace};

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lo::LocalOscillator;
use crate::physics::{
    self, dephasing_factor, pi_half_pulse, signal_unitary, InteractionParams, PhysicsError,
    Sensor, SignalField,
};

/// Name recorded in trace headers for the sampling algorithm.
pub const RNG_NAME: &str = "chacha8-stream-per-sequence/poisson";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("invalid sequence configuration: {0}")]
    InvalidConfig(String),
    #[error("population_series needs the toggled mode, got {0:?}")]
    InvalidMode(SignalMode),
    #[error("at least one tone is required")]
    NoTones,
    #[error("file does not start with the trace magic")]
    BadMagic,
    #[error("unsupported trace format version {0}")]
    VersionMismatch(u16),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("{0} unexpected bytes after the counts")]
    TrailingData(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the signal does outside the interaction window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    /// Switched on only during τ.
    Toggled,
    /// Present during the whole sequence.
    Continuous,
    /// Present during the whole sequence, with the resonance moved by `dc_shift_hz`
    /// outside τ.
    ContinuousWithDcShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub tau_s: f64,
    pub sequence_length_s: f64,
    pub overhead_s: f64,
    pub signal_mode: SignalMode,
    #[serde(default)]
    pub dc_shift_hz: f64,
    #[serde(default = "default_readout_window")]
    pub readout_window_s: f64,
    /// Damp the population oscillation by `exp(−τ/T₂*)`.
    #[serde(default)]
    pub dephasing: bool,
}

fn default_readout_window() -> f64 {
    400e-9
}

impl SequenceConfig {
    /// Toggled signal with the remaining time spent on preparation and readout.
    pub fn new(tau_s: f64, sequence_length_s: f64) -> Result<Self, TraceError> {
        let cfg = Self {
            tau_s,
            sequence_length_s,
            overhead_s: sequence_length_s - tau_s,
            signal_mode: SignalMode::Toggled,
            dc_shift_hz: 0.0,
            readout_window_s: default_readout_window().min((sequence_length_s - tau_s).max(0.0)),
            dephasing: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_mode(mut self, mode: SignalMode, dc_shift_hz: f64) -> Self {
        self.signal_mode = mode;
        self.dc_shift_hz = dc_shift_hz;
        self
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |msg: String| Err(TraceError::InvalidConfig(msg));
        if !(self.tau_s >= 0.0 && self.sequence_length_s > 0.0 && self.overhead_s >= 0.0) {
            return bad(format!(
                "need tau >= 0, T_L > 0 and overhead >= 0 (tau {}, T_L {}, overhead {})",
                self.tau_s, self.sequence_length_s, self.overhead_s
            ));
        }
        let sum = self.tau_s + self.overhead_s;
        if (sum - self.sequence_length_s).abs() > 1e-12 * self.sequence_length_s {
            return bad(format!(
                "tau + overhead = {sum} differs from the sequence length {}",
                self.sequence_length_s
            ));
        }
        if !(self.readout_window_s >= 0.0 && self.readout_window_s <= self.overhead_s) {
            return bad(format!(
                "readout window {} must fit into the overhead {}",
                self.readout_window_s, self.overhead_s
            ));
        }
        if !self.dc_shift_hz.is_finite() {
            return bad("dc shift must be finite".into());
        }
        Ok(())
    }
}

/// Fractional cycles gained per sequence, `Δφ/2π`.
fn cycles_per_sequence(lo: &LocalOscillator, signal_hz: f64) -> f64 {
    lo.phase_increment(signal_hz) / TAU
}

/// Signal phase seen by sequence `k`. The product is reduced modulo one cycle first
/// so long records keep full precision.
#[inline]
fn sequence_phase(phase0: f64, cycles: f64, k: usize) -> f64 {
    phase0 + TAU * (k as f64 * cycles).fract()
}

struct ToneModel {
    params: InteractionParams,
    /// Drive during the overhead, if any.
    overhead: Option<InteractionParams>,
    phase0: f64,
    cycles: f64,
    damping: f64,
}

impl ToneModel {
    fn new(
        signal: &SignalField,
        sensor: &Sensor,
        cfg: &SequenceConfig,
        lo: &LocalOscillator,
        mode: SignalMode,
    ) -> Result<Self, TraceError> {
        signal.validate()?;
        sensor.validate()?;
        cfg.validate()?;
        let params = InteractionParams::from_signal(signal, sensor, cfg.tau_s)?;
        let overhead = match mode {
            SignalMode::Toggled => None,
            SignalMode::Continuous => Some(params.with_tau(cfg.overhead_s)?),
            SignalMode::ContinuousWithDcShift => Some(InteractionParams::new(
                params.rabi_rad_per_s,
                params.detuning_rad_per_s + TAU * cfg.dc_shift_hz,
                cfg.overhead_s,
            )?),
        };
        let damping = if cfg.dephasing {
            dephasing_factor(cfg.tau_s, sensor.t2_star_s)
        } else {
            1.0
        };
        Ok(Self {
            params,
            overhead,
            phase0: signal.phase_rad,
            cycles: cycles_per_sequence(lo, signal.frequency_hz),
            damping,
        })
    }

    fn population(&self, k: usize) -> f64 {
        let phi = sequence_phase(self.phase0, self.cycles, k);
        match &self.overhead {
            None => {
                let (a, b) = self.params.oscillation_coefficients();
                0.5 * (1.0 + self.damping * (a * phi.cos() + b * phi.sin()))
            }
            Some(over) => {
                // the overhead drive precedes the interaction by t_over, so it sees the
                // phase the signal had Δ·t_over earlier
                let phi_pre = phi - self.params.detuning_rad_per_s * over.tau_s;
                let start = signal_unitary(over, phi_pre) * physics::ground_state();
                let end = signal_unitary(&self.params, phi) * pi_half_pulse() * start;
                let p = physics::population_one(&end);
                0.5 + self.damping * (p - 0.5)
            }
        }
    }
}

/// |1⟩ population for each of `n` sequences with a toggled signal.
pub fn population_series(
    signal: &SignalField,
    sensor: &Sensor,
    cfg: &SequenceConfig,
    lo: &LocalOscillator,
    n: usize,
) -> Result<Vec<f64>, TraceError> {
    if cfg.signal_mode != SignalMode::Toggled {
        return Err(TraceError::InvalidMode(cfg.signal_mode));
    }
    mode_adjusted_series(signal, sensor, cfg, lo, n)
}

/// Like [`population_series`] but honouring `cfg.signal_mode`.
///
/// Continuous driving is approximated by pre-rotating |0⟩ with the signal propagator
/// over the overhead before the π/2 pulse, i.e. as imperfect initialization.
pub fn mode_adjusted_series(
    signal: &SignalField,
    sensor: &Sensor,
    cfg: &SequenceConfig,
    lo: &LocalOscillator,
    n: usize,
) -> Result<Vec<f64>, TraceError> {
    let model = ToneModel::new(signal, sensor, cfg, lo, cfg.signal_mode)?;
    Ok((0..n)
        .into_par_iter()
        .map(|k| model.population(k).clamp(0.0, 1.0))
        .collect())
}

/// Additive multi-tone series and whether any element had to be clamped to `[0, 1]`.
pub fn multi_tone_series(
    signals: &[SignalField],
    sensor: &Sensor,
    cfg: &SequenceConfig,
    lo: &LocalOscillator,
    n: usize,
) -> Result<(Vec<f64>, bool), TraceError> {
    if signals.is_empty() {
        return Err(TraceError::NoTones);
    }
    let models = signals
        .iter()
        .map(|s| ToneModel::new(s, sensor, cfg, lo, cfg.signal_mode))
        .collect::<Result<Vec<_>, _>>()?;
    let raw: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| 0.5 + models.iter().map(|m| m.population(k) - 0.5).sum::<f64>())
        .collect();
    let clamped = raw.iter().any(|p| !(0.0..=1.0).contains(p));
    Ok((raw.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(), clamped))
}

/// Poisson photon counts, one independent stream per sequence index so that the
/// result does not depend on how the work is split. Returns the counts and whether
/// any count saturated at 255.
pub fn sample_counts(series: &[f64], sensor: &Sensor, seed: u64) -> (Vec<u8>, bool) {
    let base = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<(u8, bool)> = series
        .par_iter()
        .enumerate()
        .map_init(
            || base.clone(),
            |rng, (k, &p)| {
                rng.set_stream(k as u64);
                rng.set_word_pos(0);
                let lambda = sensor.photon_mean(p.clamp(0.0, 1.0));
                let draw = if lambda > 0.0 {
                    Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0)
                } else {
                    0.0
                };
                if draw >= 255.0 {
                    (u8::MAX, true)
                } else {
                    (draw as u8, false)
                }
            },
        )
        .collect();
    let saturated = counts.iter().any(|c| c.1);
    (counts.into_iter().map(|c| c.0).collect(), saturated)
}

/// The raw measurement record with everything needed to analyse it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonTrace {
    pub counts: Vec<u8>,
    pub config: SequenceConfig,
    pub lo: LocalOscillator,
    pub sensor: Sensor,
    pub seed: u64,
    pub rng_name: String,
    /// Some count reached 255 and was clamped.
    pub saturated: bool,
    pub truth: Option<Vec<SignalField>>,
}

impl PhotonTrace {
    /// Sample photons for a precomputed population series.
    pub fn sample(
        series: &[f64],
        sensor: &Sensor,
        config: &SequenceConfig,
        lo: &LocalOscillator,
        seed: u64,
        truth: Option<Vec<SignalField>>,
    ) -> Self {
        let (counts, saturated) = sample_counts(series, sensor, seed);
        Self {
            counts,
            config: *config,
            lo: *lo,
            sensor: *sensor,
            seed,
            rng_name: RNG_NAME.to_string(),
            saturated,
            truth,
        }
    }

    /// Simulate `n` sequences of one or more tones in the configured signal mode.
    pub fn simulate(
        signals: &[SignalField],
        sensor: &Sensor,
        config: &SequenceConfig,
        lo: &LocalOscillator,
        n: usize,
        seed: u64,
    ) -> Result<Self, TraceError> {
        let series = match signals {
            [one] => mode_adjusted_series(one, sensor, config, lo, n)?,
            many => multi_tone_series(many, sensor, config, lo, n)?.0,
        };
        Ok(Self::sample(&series, sensor, config, lo, seed, Some(signals.to_vec())))
    }

    pub fn n_sequences(&self) -> usize {
        self.counts.len()
    }

    pub fn total_time_s(&self) -> f64 {
        self.counts.len() as f64 * self.lo.sequence_length_s
    }

    pub fn mean_count(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().map(|&c| f64::from(c)).sum::<f64>() / self.counts.len() as f64
    }
}
