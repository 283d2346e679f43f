//! Core objects built from a [`Config`], and the shared simulate/analyse steps.

use qdyne_core::lo::LocalOscillator;
use qdyne_core::physics::{InteractionParams, Sensor, SignalField};
use qdyne_core::spectral::{
    calibrate_amplitude, fft_trace, fit_peak, AmplitudeCalibration, FitOptions, Spectrum,
};
use qdyne_core::trace::{mode_adjusted_series, multi_tone_series, PhotonTrace, SequenceConfig};

use crate::config::Config;
use crate::error::CliError;

/// Rotation of the default calibration field during τ.
pub const CALIBRATION_ANGLE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub signals: Vec<SignalField>,
    pub sensor: Sensor,
    pub sequence: SequenceConfig,
    pub lo: LocalOscillator,
    pub n: usize,
    pub fit: FitOptions,
    pub window_hz: Option<f64>,
    pub noise_band: Option<(f64, f64)>,
    pub calibration_field_t: Option<f64>,
}

impl Scenario {
    pub fn from_config(c: &Config) -> Result<Self, CliError> {
        let t_l = c.lo.sequence_length_s;
        let mut lo = match (c.lo.n_lo, c.lo.frequency_hz) {
            (Some(n_lo), _) => LocalOscillator {
                sequence_length_s: t_l,
                n_lo,
                shift_hz: 0.0,
            },
            (None, Some(f)) => LocalOscillator::with_frequency(f, t_l),
            (None, None) => {
                return Err(CliError::Config("lo: n_lo or frequency_hz is required".into()))
            }
        };
        lo = lo.shifted(c.lo.shift_hz);
        let sensor = Sensor {
            resonance_hz: c.sensor.resonance_hz.unwrap_or(lo.lo_frequency_hz()),
            gamma_rad_per_s_per_t: c.sensor.gamma_rad_per_s_per_t,
            t2_star_s: c.sensor.t2_star_s,
            bright_rate: c.sensor.bright_rate,
            dark_rate: c.sensor.dark_rate,
        };
        sensor.validate()?;
        for s in &c.signals {
            s.validate()?;
        }
        let sequence = Self::sequence_config(c, c.sequence.tau_s)?;
        let n = c.n_sequences();
        if n < 2 {
            return Err(CliError::Config(format!("need at least 2 sequences, got {n}")));
        }
        Ok(Self {
            signals: c.signals.clone(),
            sensor,
            sequence,
            lo,
            n,
            fit: FitOptions {
                window_bins: c.analysis.window_bins,
                ..FitOptions::default()
            },
            window_hz: c.analysis.window_hz,
            noise_band: c.analysis.noise_band,
            calibration_field_t: c.analysis.calibration_field_t,
        })
    }

    fn sequence_config(c: &Config, tau_s: f64) -> Result<SequenceConfig, CliError> {
        let mut seq = SequenceConfig::new(tau_s, c.lo.sequence_length_s)?
            .with_mode(c.sequence.signal_mode, c.sequence.dc_shift_hz);
        if let Some(w) = c.sequence.readout_window_s {
            seq.readout_window_s = w;
        }
        seq.dephasing = c.sequence.dephasing;
        seq.validate()?;
        Ok(seq)
    }

    pub fn t_l(&self) -> f64 {
        self.lo.sequence_length_s
    }

    pub fn total_time_s(&self) -> f64 {
        self.n as f64 * self.t_l()
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn with_tau(&self, tau_s: f64) -> Result<Self, CliError> {
        let mut sequence = SequenceConfig::new(tau_s, self.t_l())?
            .with_mode(self.sequence.signal_mode, self.sequence.dc_shift_hz);
        sequence.readout_window_s = self.sequence.readout_window_s.min(sequence.overhead_s);
        sequence.dephasing = self.sequence.dephasing;
        sequence.validate()?;
        Ok(Self {
            sequence,
            ..self.clone()
        })
    }

    /// The same sequence timing with another LO; `T_L` follows the LO.
    pub fn with_lo(&self, lo: LocalOscillator) -> Result<Self, CliError> {
        let mut sequence = self.sequence;
        sequence.sequence_length_s = lo.sequence_length_s;
        sequence.overhead_s = lo.sequence_length_s - sequence.tau_s;
        sequence.readout_window_s = sequence.readout_window_s.min(sequence.overhead_s.max(0.0));
        sequence.validate()?;
        Ok(Self {
            lo,
            sequence,
            ..self.clone()
        })
    }

    pub fn with_signals(&self, signals: Vec<SignalField>) -> Self {
        Self {
            signals,
            ..self.clone()
        }
    }

    /// Fit options at this record length.
    pub fn fit_options(&self) -> FitOptions {
        match self.window_hz {
            Some(hz) => {
                let bin = 1.0 / self.total_time_s();
                FitOptions {
                    window_bins: ((hz / bin).round() as usize).max(5),
                    ..self.fit
                }
            }
            None => self.fit,
        }
    }

    /// Noise-floor window in bins, if a band is configured.
    pub fn noise_window(&self, spec: &Spectrum) -> Option<(usize, usize)> {
        self.noise_band.map(|(a, b)| {
            let len = spec.len() as f64;
            ((a * len).floor() as usize, ((b * len).ceil() as usize).min(spec.len()))
        })
    }

    fn series(&self, signals: &[SignalField]) -> Result<Vec<f64>, CliError> {
        Ok(match signals {
            [one] => mode_adjusted_series(one, &self.sensor, &self.sequence, &self.lo, self.n)?,
            many => multi_tone_series(many, &self.sensor, &self.sequence, &self.lo, self.n)?.0,
        })
    }

    pub fn trace(&self, seed: u64) -> Result<PhotonTrace, CliError> {
        Ok(PhotonTrace::simulate(
            &self.signals,
            &self.sensor,
            &self.sequence,
            &self.lo,
            self.n,
            seed,
        )?)
    }

    /// Spectrum of sampled counts, or of the expected rates without a seed.
    pub fn spectrum(&self, seed: Option<u64>) -> Result<Spectrum, CliError> {
        match seed {
            Some(seed) => Ok(fft_trace(&self.trace(seed)?)?),
            None => self.rate_spectrum(&self.signals),
        }
    }

    fn rate_spectrum(&self, signals: &[SignalField]) -> Result<Spectrum, CliError> {
        let rates: Vec<f64> = self
            .series(signals)?
            .iter()
            .map(|&p| self.sensor.photon_mean(p))
            .collect();
        Ok(Spectrum::from_samples(&rates, self.t_l())?)
    }

    /// The image of `signed_beat_hz` nearest the sensor resonance, where a known
    /// reference field gives the best-conditioned calibration.
    pub fn reference_frequency(&self, signed_beat_hz: f64) -> f64 {
        let res = self.sensor.resonance_hz;
        res + (signed_beat_hz - self.lo.beat_note(res).signed_hz)
    }

    /// Calibration measurement: a known field at `frequency_hz`, same settings,
    /// analysed from its expected rates.
    pub fn calibrate(&self, frequency_hz: f64) -> Result<AmplitudeCalibration, CliError> {
        let tau = self.sequence.tau_s;
        let gamma = self.sensor.gamma_rad_per_s_per_t;
        let field = match self.calibration_field_t {
            Some(b) => b,
            None if tau > 0.0 => CALIBRATION_ANGLE / (gamma * tau),
            None => {
                return Err(CliError::Config("calibration needs tau_s > 0".into()));
            }
        };
        let reference = SignalField::new(field, frequency_hz, 0.0)?;
        let spec = self.rate_spectrum(&[reference])?;
        let fit = fit_peak(&spec, &self.fit_options())?;
        let params = InteractionParams::from_signal(&reference, &self.sensor, tau)?;
        let damping = if self.sequence.dephasing {
            qdyne_core::physics::dephasing_factor(tau, self.sensor.t2_star_s)
        } else {
            1.0
        };
        Ok(calibrate_amplitude(&fit, self.n, &params, gamma, damping)?)
    }
}
