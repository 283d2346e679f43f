//! JSON scenario configuration. Every field has a default, so `{}` is a valid
//! config (a 6.5 µT tone 20 kHz above a 1.5108 GHz LO, 1 s of sequences); unknown
//! fields are rejected.

use std::path::Path;

use qdyne_core::ambiguity::Modification;
use qdyne_core::physics::{Sensor, SignalField, GAMMA_NV};
use qdyne_core::trace::SignalMode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub name: String,
    pub signals: Vec<SignalField>,
    pub sensor: SensorSpec,
    pub lo: LoSpec,
    pub sequence: SequenceSpec,
    /// Give at most one of `n_sequences` and `total_time_s`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_sequences: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_time_s: Option<f64>,
    pub seeds: Vec<u64>,
    /// Analyse expected photon rates instead of sampled counts.
    pub noiseless: bool,
    pub analysis: AnalysisSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ResolutionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

pub const DEFAULT_SEQUENCE_LENGTH_S: f64 = 10.0 / 3.0 * 1e-6;
pub const DEFAULT_N_LO: i64 = 5036;
pub const DEFAULT_N_SEQUENCES: usize = 300_000;

impl Default for Config {
    fn default() -> Self {
        let lo_hz = DEFAULT_N_LO as f64 / DEFAULT_SEQUENCE_LENGTH_S;
        Self {
            name: "qdyne".into(),
            signals: vec![SignalField {
                amplitude_t: 6.5e-6,
                frequency_hz: lo_hz + 20e3,
                phase_rad: 0.0,
            }],
            sensor: SensorSpec::default(),
            lo: LoSpec::default(),
            sequence: SequenceSpec::default(),
            n_sequences: None,
            total_time_s: None,
            seeds: vec![1],
            noiseless: false,
            analysis: AnalysisSpec::default(),
            resolution: None,
            ladder: None,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    /// Defaults to the LO frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resonance_hz: Option<f64>,
    pub gamma_rad_per_s_per_t: f64,
    pub t2_star_s: f64,
    pub bright_rate: f64,
    pub dark_rate: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            resonance_hz: None,
            gamma_rad_per_s_per_t: GAMMA_NV,
            t2_star_s: 50e-6,
            bright_rate: Sensor::DEFAULT_BRIGHT_RATE,
            dark_rate: Sensor::DEFAULT_DARK_RATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoSpec {
    pub sequence_length_s: f64,
    /// Harmonic index; exclusive with `frequency_hz`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_lo: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    pub shift_hz: f64,
}

impl Default for LoSpec {
    fn default() -> Self {
        Self {
            sequence_length_s: DEFAULT_SEQUENCE_LENGTH_S,
            n_lo: Some(DEFAULT_N_LO),
            frequency_hz: None,
            shift_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSpec {
    pub tau_s: f64,
    pub signal_mode: SignalMode,
    pub dc_shift_hz: f64,
    /// Defaults to 400 ns or the whole overhead if that is shorter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout_window_s: Option<f64>,
    pub dephasing: bool,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            tau_s: 1404e-9,
            signal_mode: SignalMode::Toggled,
            dc_shift_hz: 0.0,
            readout_window_s: None,
            dephasing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub window_bins: usize,
    /// Fit span in Hz; overrides `window_bins` so that the span is the same at
    /// every record length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_hz: Option<f64>,
    /// Noise-floor band as fractions of the Nyquist frequency; the fit window
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_band: Option<(f64, f64)>,
    pub correct_theta: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beat_sign: Option<i8>,
    /// Known field of the calibration measurement; defaults to a 0.3 rad rotation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_field_t: Option<f64>,
    /// Report every peak above this many robust σ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_threshold_sigma: Option<f64>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            window_bins: 50,
            window_hz: None,
            noise_band: None,
            correct_theta: true,
            beat_sign: None,
            calibration_field_t: None,
            peak_threshold_sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionSpec {
    pub modifications: Vec<Modification>,
    #[serde(default = "default_n_range")]
    pub n_range: (i64, i64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max_rad_per_s: Option<f64>,
}

fn default_n_range() -> (i64, i64) {
    (-2, 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSpec {
    pub total_times_s: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    TauS,
    /// Signal minus sensor resonance; moves the resonance, keeps the beat.
    DetuningHz,
    /// Moves the signal, keeps the sensor and LO.
    SignalFrequencyHz,
    AmplitudeT,
    TotalTimeS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Explicit points; otherwise `points` values spaced evenly over `[start, stop]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub stop: f64,
    #[serde(default)]
    pub points: usize,
}

impl SweepSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let v = match &self.values {
            Some(v) => v.clone(),
            None => {
                if self.points == 0 || self.start.is_nan() || self.stop.is_nan() || self.start > self.stop {
                    return Err(CliError::Config(format!(
                        "sweep.points = {}, sweep.start = {}, sweep.stop = {}: empty range",
                        self.points, self.start, self.stop
                    )));
                }
                if self.points == 1 {
                    vec![self.start]
                } else {
                    let step = (self.stop - self.start) / (self.points - 1) as f64;
                    (0..self.points).map(|i| self.start + i as f64 * step).collect()
                }
            }
        };
        if v.is_empty() {
            return Err(CliError::Config("sweep.values: empty range".into()));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(CliError::Config(format!("sweep.values: {bad} is not finite")));
        }
        Ok(v)
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Config(format!(
                "line {} column {}, field `{path}`: {inner}",
                inner.line(),
                inner.column()
            ))
        })?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Cross-field checks that serde cannot express.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.signals.is_empty() {
            return bad("signals: at least one tone is needed".into());
        }
        if self.lo.n_lo.is_some() && self.lo.frequency_hz.is_some() {
            return bad("lo: give either n_lo or frequency_hz, not both".into());
        }
        if self.lo.sequence_length_s.is_nan() || self.lo.sequence_length_s <= 0.0 {
            return bad(format!(
                "lo.sequence_length_s must be > 0, got {}",
                self.lo.sequence_length_s
            ));
        }
        if let (Some(n), Some(t)) = (self.n_sequences, self.total_time_s) {
            let implied = t / self.lo.sequence_length_s;
            if (implied - n as f64).abs() > 0.5 {
                return bad(format!(
                    "n_sequences = {n} but total_time_s / sequence_length_s = {implied}"
                ));
            }
        }
        if let Some(t) = self.total_time_s {
            if t.is_nan() || t <= 0.0 {
                return bad(format!("total_time_s must be > 0, got {t}"));
            }
        }
        if self.seeds.is_empty() && !self.noiseless {
            return bad("seeds: at least one seed is needed unless noiseless".into());
        }
        if self.analysis.window_bins < 5 {
            return bad(format!(
                "analysis.window_bins must be >= 5, got {}",
                self.analysis.window_bins
            ));
        }
        if let Some((a, b)) = self.analysis.noise_band {
            if !(0.0 <= a && a < b && b <= 1.0) {
                return bad(format!("analysis.noise_band ({a}, {b}) must satisfy 0 <= a < b <= 1"));
            }
        }
        if let Some(s) = &self.sweep {
            s.values()?;
        }
        Ok(())
    }

    pub fn n_sequences(&self) -> usize {
        match (self.n_sequences, self.total_time_s) {
            (Some(n), _) => n,
            (None, Some(t)) => (t / self.lo.sequence_length_s).round() as usize,
            (None, None) => DEFAULT_N_SEQUENCES,
        }
    }
}
