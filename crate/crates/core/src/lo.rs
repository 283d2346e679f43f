//! Sequence-timing local oscillator and beat-note arithmetic.
//!
//! Repeating the measurement every `T_L` samples the signal phase once per sequence,
//! so the outcomes oscillate at the difference between the signal and the nearest
//! multiple of `1/T_L`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// `ν_LO = N_LO / T_L`, optionally offset by `shift_hz`.
///
/// A nonzero shift stands for a reference phase advanced by `2π·shift·T_L` on every
/// sequence, which is how a slightly modified LO is realised without changing `T_L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalOscillator {
    pub sequence_length_s: f64,
    pub n_lo: i64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift_hz: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

/// A beat folded into `[-1/(2T_L), 1/(2T_L))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatNote {
    pub signed_hz: f64,
    pub magnitude_hz: f64,
    /// Δφ per sequence in `[-π, π)`.
    pub phase_increment_rad: f64,
}

/// One in-band image `ν_LO + sign·δ + N/T_L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AliasCandidate {
    pub n: i64,
    pub sign: i8,
    pub frequency_hz: f64,
}

impl LocalOscillator {
    /// The LO nearest the sensor resonance. Ties round away from zero.
    pub fn from_resonance(resonance_hz: f64, sequence_length_s: f64) -> Self {
        assert!(
            resonance_hz > 0.0 && sequence_length_s > 0.0,
            "resonance and sequence length must be positive"
        );
        Self {
            sequence_length_s,
            n_lo: (resonance_hz * sequence_length_s).round() as i64,
            shift_hz: 0.0,
        }
    }

    /// An LO at an arbitrary frequency: the nearest harmonic of `1/T_L` plus a shift.
    pub fn with_frequency(lo_frequency_hz: f64, sequence_length_s: f64) -> Self {
        let n_lo = (lo_frequency_hz * sequence_length_s).round() as i64;
        Self {
            sequence_length_s,
            n_lo,
            shift_hz: lo_frequency_hz - n_lo as f64 / sequence_length_s,
        }
    }

    pub fn shifted(&self, shift_hz: f64) -> Self {
        Self {
            shift_hz: self.shift_hz + shift_hz,
            ..*self
        }
    }

    pub fn lo_frequency_hz(&self) -> f64 {
        self.n_lo as f64 / self.sequence_length_s + self.shift_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        1.0 / self.sequence_length_s
    }

    pub fn nyquist_hz(&self) -> f64 {
        0.5 / self.sequence_length_s
    }

    /// Folded fraction of a cycle gained per sequence, in `[-1/2, 1/2)`.
    fn folded_cycles(&self, signal_hz: f64) -> f64 {
        // subtract the harmonic before scaling so no large product is formed
        let offset = (signal_hz - self.n_lo as f64 / self.sequence_length_s) - self.shift_hz;
        let r = (0.5 + offset * self.sequence_length_s).rem_euclid(1.0);
        let r = if r >= 1.0 { 0.0 } else { r };
        r - 0.5
    }

    /// Sawtooth phase increment `2π[(½ + (ν_sig − ν_LO)T_L) mod 1 − ½]`.
    pub fn phase_increment(&self, signal_hz: f64) -> f64 {
        TAU * self.folded_cycles(signal_hz)
    }

    pub fn beat_note(&self, signal_hz: f64) -> BeatNote {
        let cycles = self.folded_cycles(signal_hz);
        let signed_hz = cycles / self.sequence_length_s;
        BeatNote {
            signed_hz,
            magnitude_hz: signed_hz.abs(),
            phase_increment_rad: TAU * cycles,
        }
    }

    /// Every `ν_LO ± δ + N/T_L` for `N` in `ns`. For `δ = 0` the pair collapses to one.
    pub fn alias_candidates(
        &self,
        measured_delta_hz: f64,
        ns: impl IntoIterator<Item = i64>,
    ) -> Vec<AliasCandidate> {
        let signs: &[i8] = if measured_delta_hz == 0.0 { &[1] } else { &[1, -1] };
        let mut out = Vec::new();
        for n in ns {
            for &sign in signs {
                out.push(AliasCandidate {
                    n,
                    sign,
                    frequency_hz: self.lo_frequency_hz()
                        + f64::from(sign) * measured_delta_hz
                        + n as f64 / self.sequence_length_s,
                });
            }
        }
        out
    }
}
