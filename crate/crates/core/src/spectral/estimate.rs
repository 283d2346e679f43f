//! Frequency, amplitude and phase estimates from a fitted peak.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::fit::{fit_peak, fit_range, FitOptions, LorentzianFit};
use super::{SpectralError, Spectrum};
use crate::lo::LocalOscillator;
use crate::physics::{contrast, normalize_phase, InteractionParams, Sensor};

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    /// |δ̂| = x₀.
    pub beat_hz: f64,
    pub ci_hz: f64,
    /// `[ν_LO + δ̂, ν_LO − δ̂]`; the sign needs a second measurement.
    pub candidates_hz: [f64; 2],
}

pub fn estimate_frequency(fit: &LorentzianFit, lo: &LocalOscillator) -> FrequencyEstimate {
    let nu = lo.lo_frequency_hz();
    FrequencyEstimate {
        beat_hz: fit.center_hz,
        ci_hz: fit.ci95.center_hz,
        candidates_hz: [nu + fit.center_hz, nu - fit.center_hz],
    }
}

/// Maps fitted peak heights to contrast using one measurement of a known field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeCalibration {
    /// Fitted `L₀` per sequence per unit contrast.
    pub peak_per_contrast: f64,
    /// Ω₀ of the reference; selects the contrast branch used for inversion.
    pub reference_rabi_rad_per_s: f64,
    pub gamma_rad_per_s_per_t: f64,
    /// Oscillation damping assumed for the reference (1 without dephasing).
    #[serde(default = "one")]
    pub damping: f64,
}

fn one() -> f64 {
    1.0
}

/// Calibrate from a fit of a trace with `n_samples` sequences taken with `reference`.
pub fn calibrate_amplitude(
    fit: &LorentzianFit,
    n_samples: usize,
    reference: &InteractionParams,
    gamma: f64,
    damping: f64,
) -> Result<AmplitudeCalibration, SpectralError> {
    let c = contrast(reference) * damping;
    if !(c > 0.0 && fit.amplitude > 0.0 && n_samples > 0) {
        return Err(SpectralError::InvalidCalibration(format!(
            "reference contrast {c} and peak {} must both be positive",
            fit.amplitude
        )));
    }
    Ok(AmplitudeCalibration {
        peak_per_contrast: fit.amplitude / (n_samples as f64 * c),
        reference_rabi_rad_per_s: reference.rabi_rad_per_s,
        gamma_rad_per_s_per_t: gamma,
        damping,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEstimate {
    pub field_t: f64,
    pub ci_t: f64,
    pub rabi_rad_per_s: f64,
    pub contrast: f64,
    /// Tesla per unit of spectrum magnitude at the estimate, `1/(κ n |dC/dB|)`.
    pub field_per_peak_t: f64,
    /// Ω₀ interval of the monotone contrast branch that was inverted.
    pub branch_rad_per_s: (f64, f64),
}

struct ContrastCurve {
    detuning: f64,
    tau: f64,
    damping: f64,
}

impl ContrastCurve {
    fn at(&self, rabi: f64) -> f64 {
        InteractionParams::new(rabi.max(0.0), self.detuning, self.tau)
            .map(|p| contrast(&p) * self.damping)
            .unwrap_or(0.0)
    }

    fn slope(&self, rabi: f64) -> f64 {
        let h = 1e-6 * (rabi.abs() + 1.0 / self.tau);
        let lo = (rabi - h).max(0.0);
        (self.at(rabi + h) - self.at(lo)) / (rabi + h - lo)
    }

    /// Locate the extremum in `[a, b]` where the curve stops moving in `dir`.
    fn refine_turn(&self, mut a: f64, mut b: f64, dir: f64) -> f64 {
        for _ in 0..100 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if dir * self.at(m1) < dir * self.at(m2) {
                a = m1;
            } else {
                b = m2;
            }
        }
        0.5 * (a + b)
    }

    /// Largest interval around `rabi_ref` on which the contrast is monotone.
    fn branch(&self, rabi_ref: f64) -> (f64, f64) {
        let step = 0.02 / self.tau;
        let slope = self.slope(rabi_ref);
        let dir = if slope < 0.0 { -1.0 } else { 1.0 };
        // going left the curve must move against `dir`
        let mut lo = rabi_ref;
        loop {
            if lo <= 0.0 {
                lo = 0.0;
                break;
            }
            let next = (lo - step).max(0.0);
            if dir * self.at(next) > dir * self.at(lo) {
                lo = self.refine_turn(next, (lo + step).min(rabi_ref), -dir);
                break;
            }
            lo = next;
        }
        let cap = rabi_ref + 1000.0 / self.tau;
        let mut hi = rabi_ref;
        loop {
            let next = hi + step;
            if next > cap {
                hi = cap;
                break;
            }
            if dir * self.at(next) < dir * self.at(hi) {
                hi = self.refine_turn((hi - step).max(lo), next, dir);
                break;
            }
            hi = next;
        }
        (lo.max(0.0), hi.max(rabi_ref))
    }

    fn invert(&self, target: f64, (a, b): (f64, f64)) -> Result<f64, SpectralError> {
        let (ca, cb) = (self.at(a), self.at(b));
        let (low, high) = (ca.min(cb), ca.max(cb));
        if !(low..=high).contains(&target) {
            return Err(SpectralError::OutOfDynamicRange {
                measured: target,
                low,
                high,
            });
        }
        let rising = cb >= ca;
        let (mut x0, mut x1) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (x0 + x1);
            if (self.at(mid) < target) == rising {
                x0 = mid;
            } else {
                x1 = mid;
            }
        }
        Ok(0.5 * (x0 + x1))
    }
}

/// Invert the contrast model on the branch holding the calibration field.
pub fn estimate_amplitude(
    fit: &LorentzianFit,
    n_samples: usize,
    calibration: &AmplitudeCalibration,
    tau_s: f64,
    detuning_rad_per_s: f64,
) -> Result<AmplitudeEstimate, SpectralError> {
    if !(tau_s > 0.0 && calibration.peak_per_contrast > 0.0 && n_samples > 0) {
        return Err(SpectralError::InvalidCalibration(
            "tau, calibration factor and sample count must be positive".into(),
        ));
    }
    let curve = ContrastCurve {
        detuning: detuning_rad_per_s,
        tau: tau_s,
        damping: calibration.damping,
    };
    let scale = calibration.peak_per_contrast * n_samples as f64;
    let measured = fit.amplitude / scale;
    let contrast_ci = fit.ci95.amplitude / scale;
    let branch = curve.branch(calibration.reference_rabi_rad_per_s);
    let (ca, cb) = (curve.at(branch.0), curve.at(branch.1));
    let (low, high) = (ca.min(cb), ca.max(cb));
    // an overshoot within the interval is noise at a turning point
    let clamped = if measured > high && measured - high <= contrast_ci {
        Some(high)
    } else if measured < low && low - measured <= contrast_ci {
        Some(low)
    } else {
        None
    };
    let rabi = curve.invert(clamped.unwrap_or(measured), branch)?;
    let gamma = calibration.gamma_rad_per_s_per_t;
    let dc_dfield = curve.slope(rabi).abs() * gamma;
    let field_per_peak_t = 1.0 / (scale * dc_dfield);
    let ci_t = match clamped {
        // flat slope there; take the field change over one interval of contrast
        Some(edge) => {
            let inner = if edge == high { edge - contrast_ci } else { edge + contrast_ci };
            let other = curve.invert(inner.clamp(low, high), branch)?;
            (other - rabi).abs() / gamma
        }
        None => fit.ci95.amplitude * field_per_peak_t,
    };
    Ok(AmplitudeEstimate {
        field_t: rabi / gamma,
        ci_t,
        rabi_rad_per_s: rabi,
        contrast: measured,
        field_per_peak_t,
        branch_rad_per_s: branch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    /// RMS of spectrum magnitude minus fit over the window.
    pub raw_rms: f64,
    /// The same expressed as a field, if an amplitude calibration is available.
    pub field_t: Option<f64>,
}

/// Residual RMS `√(Σ(y − L)²/(N−1))` over `window` (default: the fit window).
pub fn noise_floor(
    spec: &Spectrum,
    fit: &LorentzianFit,
    window: Option<(usize, usize)>,
    amplitude: Option<&AmplitudeEstimate>,
) -> NoiseFloor {
    let (start, end) = window.unwrap_or((fit.window_start, fit.window_end));
    let start = start.max(1);
    let end = end.min(spec.len());
    let n = end.saturating_sub(start);
    let raw_rms = if n < 2 {
        0.0
    } else {
        let ss: f64 = (start..end)
            .map(|m| (spec.bins[m].norm() - fit.eval(spec.bin_frequency(m as f64))).powi(2))
            .sum();
        (ss / (n as f64 - 1.0)).sqrt()
    };
    NoiseFloor {
        raw_rms,
        field_t: amplitude.map(|a| raw_rms * a.field_per_peak_t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    /// φ̂₀ in `[-π, π)`.
    pub phase_rad: f64,
    pub ci_rad: f64,
    /// Interpolated argument of the spectrum at x₀.
    pub beat_phase_rad: f64,
    /// θ from the detuning, when drive parameters were supplied.
    pub theta_rad: Option<f64>,
    /// Offset actually removed, `arg(A − iB)`: θ, or θ + π when `sin(Ω_sig τ) < 0`.
    pub correction_rad: f64,
    pub beat_sign: i8,
}

/// Phase from the two bins straddling the fitted centre.
///
/// Counts fall as the |1⟩ population rises, so the beat in the count record is
/// inverted; that π is removed first. For a negative beat the record carries the
/// conjugate oscillation and the phase is negated before the drive correction
/// `arg(A − iB)` is subtracted. Without `params` no correction is applied.
pub fn estimate_phase(
    spec: &Spectrum,
    fit: &LorentzianFit,
    params: Option<&InteractionParams>,
    beat_sign: i8,
) -> Result<PhaseEstimate, SpectralError> {
    let x0 = fit.center_bin();
    let m = x0.floor();
    if !(m >= 1.0 && (m as usize) + 1 < spec.len()) {
        return Err(SpectralError::PeakOnBoundary(x0.round().max(0.0) as usize));
    }
    let m = m as usize;
    let w = x0 - m as f64;
    let (a, b) = (spec.bins[m], spec.bins[m + 1]);
    let n = spec.n_samples as f64;
    // a tone between the bins advances the argument by −π(n−1)/n per bin
    let slope = -PI * (n - 1.0) / n;
    let raw_diff = b.arg() - a.arg();
    let diff = raw_diff - TAU * ((raw_diff - slope) / TAU).round();
    let beat_phase = normalize_phase(a.arg() + w * diff);

    let sign = if beat_sign < 0 { -1.0 } else { 1.0 };
    let (theta, correction) = match params {
        Some(p) => (
            crate::physics::beat_phase_shift(p).ok(),
            p.beat_phasor().arg(),
        ),
        None => (None, 0.0),
    };
    let phase = normalize_phase(sign * (beat_phase - PI) - correction);

    let sigma_a = fit.residual_noise / a.norm().max(f64::MIN_POSITIVE);
    let sigma_b = fit.residual_noise / b.norm().max(f64::MIN_POSITIVE);
    let from_center = slope * fit.center_ci_bins();
    let from_bins = Z95 * Z95 * ((1.0 - w).powi(2) * sigma_a * sigma_a + w * w * sigma_b * sigma_b);
    Ok(PhaseEstimate {
        phase_rad: phase,
        ci_rad: (from_center * from_center + from_bins).sqrt(),
        beat_phase_rad: beat_phase,
        theta_rad: theta,
        correction_rad: correction,
        beat_sign: if sign < 0.0 { -1 } else { 1 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakCandidate {
    pub bin: usize,
    pub frequency_hz: f64,
    pub magnitude: f64,
    pub fit: Option<LorentzianFit>,
}

/// Local maxima exceeding `median + threshold_sigma·σ`, with σ the MAD-based robust
/// spread of the non-DC magnitudes. Each is fitted in a window that stops halfway to
/// its neighbours (widened to the minimum of 5 bins if needed).
pub fn find_peaks(spec: &Spectrum, threshold_sigma: f64, opts: &FitOptions) -> Vec<PeakCandidate> {
    let mags = spec.magnitudes();
    if mags.len() < 4 {
        return Vec::new();
    }
    let mut sorted = mags[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let sigma = 1.4826 * dev[dev.len() / 2];
    let threshold = median + threshold_sigma * sigma;

    let peaks: Vec<usize> = (1..mags.len() - 1)
        .filter(|&m| mags[m] > mags[m - 1] && mags[m] >= mags[m + 1] && mags[m] > threshold)
        .collect();
    let half = opts.window_bins / 2;
    peaks
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let left = if i > 0 { (peaks[i - 1] + m).div_ceil(2) } else { 1 };
            let right = peaks.get(i + 1).map_or(mags.len(), |&r| (m + r) / 2 + 1);
            let mut start = m.saturating_sub(half).max(left).max(1);
            let mut end = (m + half).min(right).min(mags.len());
            while end - start < 5 && (start > 1 || end < mags.len()) {
                start = start.saturating_sub(1).max(1);
                end = (end + 1).min(mags.len());
            }
            PeakCandidate {
                bin: m,
                frequency_hz: spec.bin_frequency(m as f64),
                magnitude: mags[m],
                fit: fit_range(spec, &mags, m, start, end, opts.max_iterations).ok(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructOptions {
    #[serde(default)]
    pub fit: FitOptions,
    /// Sign of δ₀ from a resolution step; `None` assumes positive.
    #[serde(default)]
    pub beat_sign: Option<i8>,
    /// Subtract the detuning-induced phase shift (needs a calibration).
    #[serde(default = "yes")]
    pub correct_theta: bool,
    #[serde(default)]
    pub calibration: Option<AmplitudeCalibration>,
}

fn yes() -> bool {
    true
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            beat_sign: None,
            correct_theta: true,
            calibration: None,
        }
    }
}

/// Estimated signal with 95 % intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub beat_hz: f64,
    pub beat_ci_hz: f64,
    pub frequency_hz: f64,
    pub frequency_ci_hz: f64,
    pub amplitude_t: Option<f64>,
    pub amplitude_ci_t: Option<f64>,
    pub phase_rad: f64,
    pub phase_ci_rad: f64,
    pub theta_correction_rad: f64,
    pub sign_resolved: bool,
    pub noise_floor: NoiseFloor,
    pub fit: LorentzianFit,
}

/// Fit, then estimate frequency, amplitude (if calibrated) and phase.
pub fn reconstruct(
    spec: &Spectrum,
    lo: &LocalOscillator,
    sensor: &Sensor,
    tau_s: f64,
    opts: &ReconstructOptions,
) -> Result<ReconstructionResult, SpectralError> {
    let fit = fit_peak(spec, &opts.fit)?;
    let freq = estimate_frequency(&fit, lo);
    let sign = opts.beat_sign.unwrap_or(1);
    let frequency_hz = if sign < 0 {
        freq.candidates_hz[1]
    } else {
        freq.candidates_hz[0]
    };
    let detuning = sensor.detuning(frequency_hz);
    let amplitude = opts
        .calibration
        .as_ref()
        .map(|cal| estimate_amplitude(&fit, spec.n_samples, cal, tau_s, detuning))
        .transpose()?;
    let params = match (&amplitude, opts.correct_theta) {
        (Some(a), true) => Some(InteractionParams::new(a.rabi_rad_per_s, detuning, tau_s)?),
        _ => None,
    };
    let phase = estimate_phase(spec, &fit, params.as_ref(), sign)?;
    Ok(ReconstructionResult {
        beat_hz: freq.beat_hz,
        beat_ci_hz: freq.ci_hz,
        frequency_hz,
        frequency_ci_hz: freq.ci_hz,
        amplitude_t: amplitude.map(|a| a.field_t),
        amplitude_ci_t: amplitude.map(|a| a.ci_t),
        phase_rad: phase.phase_rad,
        phase_ci_rad: phase.ci_rad,
        theta_correction_rad: phase.correction_rad,
        sign_resolved: opts.beat_sign.is_some(),
        noise_floor: noise_floor(spec, &fit, None, amplitude.as_ref()),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{SignalField, GAMMA_NV};
    use crate::trace::{population_series, SequenceConfig};
    use std::f64::consts::FRAC_PI_2;

    /// Noiseless count-rate series of one tone.
    struct Setup {
        lo: LocalOscillator,
        sensor: Sensor,
        cfg: SequenceConfig,
        n: usize,
    }

    impl Setup {
        fn new(n: usize, tau: f64) -> Self {
            let t_l = 2e-6;
            Self {
                lo: LocalOscillator::from_resonance(1.5e9, t_l),
                sensor: Sensor::nv(1.5e9),
                cfg: SequenceConfig::new(tau, t_l).unwrap(),
                n,
            }
        }

        fn spectrum(&self, signal: &SignalField) -> Spectrum {
            let p = population_series(signal, &self.sensor, &self.cfg, &self.lo, self.n).unwrap();
            let rate: Vec<f64> = p.iter().map(|&x| self.sensor.photon_mean(x)).collect();
            Spectrum::from_samples(&rate, self.lo.sequence_length_s).unwrap()
        }

        /// Put the sensor on resonance with `signal`, so that Δ = 0.
        fn resonant(mut self, signal: &SignalField) -> Self {
            self.sensor = Sensor::nv(signal.frequency_hz);
            self
        }

        fn bin_hz(&self) -> f64 {
            1.0 / (self.n as f64 * self.lo.sequence_length_s)
        }
    }

    #[test]
    fn bin_centred_frequency() {
        let s = Setup::new(50_000, 1e-6);
        let beat = 200.0 * s.bin_hz();
        let sig = SignalField::new(2e-6, 1.5e9 + beat, 0.0).unwrap();
        let spec = s.spectrum(&sig);
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let f = estimate_frequency(&fit, &s.lo);
        assert!((f.beat_hz - beat).abs() < 1e-3 * s.bin_hz());
        assert!((f.candidates_hz[0] - (1.5e9 + beat)).abs() < 1e-3 * s.bin_hz());
    }

    #[test]
    fn bin_centred_phase_zero() {
        let s = Setup::new(50_000, 1e-6);
        let sig = SignalField::new(2e-6, 1.5e9 + 2000.0 * s.bin_hz(), 0.0).unwrap();
        let s = s.resonant(&sig);
        let spec = s.spectrum(&sig);
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let ph = estimate_phase(&spec, &fit, None, 1).unwrap();
        assert!(ph.phase_rad.abs() < 1e-6, "{}", ph.phase_rad);
    }

    #[test]
    fn off_bin_phase() {
        let s = Setup::new(50_000, 1e-6);
        for phase in [1.2, -2.5, 3.0] {
            let sig = SignalField::new(2e-6, 1.5e9 + 2000.5 * s.bin_hz(), phase).unwrap();
            let s = Setup::new(50_000, 1e-6).resonant(&sig);
            let spec = s.spectrum(&sig);
            let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
            let ph = estimate_phase(&spec, &fit, None, 1).unwrap();
            assert!(
                normalize_phase(ph.phase_rad - phase).abs() < 1e-3,
                "{phase}: {} x0 {}",
                ph.phase_rad,
                fit.center_bin()
            );
        }
    }

    #[test]
    fn negative_beat_phase() {
        let s = Setup::new(50_000, 1e-6);
        let phase = 0.8;
        let sig = SignalField::new(2e-6, 1.5e9 - 2000.5 * s.bin_hz(), phase).unwrap();
        let s = s.resonant(&sig);
        let spec = s.spectrum(&sig);
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let ph = estimate_phase(&spec, &fit, None, -1).unwrap();
        assert!(normalize_phase(ph.phase_rad - phase).abs() < 1e-3, "{}", ph.phase_rad);
        let wrong = estimate_phase(&spec, &fit, None, 1).unwrap();
        assert!(normalize_phase(wrong.phase_rad + phase).abs() < 1e-3);
    }

    #[test]
    fn theta_correction_recovers_detuned_phase() {
        // Δ = Ω₀ with Ω_sig τ = π/2 puts θ at arctan(1/√2)
        let rabi = TAU * 100e3;
        let detuning = rabi;
        let tau = FRAC_PI_2 / (rabi * 2f64.sqrt());
        let mut s = Setup::new(50_000, tau);
        s.sensor = Sensor::nv(1.5e9 + 2000.5 / (50_000.0 * 2e-6) - detuning / TAU);
        let phase = 0.4;
        let sig = SignalField::new(rabi / GAMMA_NV, 1.5e9 + 2000.5 * s.bin_hz(), phase).unwrap();
        let spec = s.spectrum(&sig);
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let p = InteractionParams::from_signal(&sig, &s.sensor, tau).unwrap();
        assert!((p.detuning_rad_per_s - detuning).abs() < 1e-6 * rabi);
        let raw = estimate_phase(&spec, &fit, None, 1).unwrap();
        let corrected = estimate_phase(&spec, &fit, Some(&p), 1).unwrap();
        let theta = (0.5f64.sqrt()).atan();
        assert!((corrected.theta_rad.unwrap() - theta).abs() < 1e-12);
        assert!(normalize_phase(raw.phase_rad - phase - theta).abs() < 1e-3);
        assert!(normalize_phase(corrected.phase_rad - phase).abs() < 1e-3);
    }

    #[test]
    fn correction_uses_phasor_branch_when_sine_negative() {
        let rabi = TAU * 400e3;
        let tau = 1.3 * PI / rabi;
        let mut s = Setup::new(50_000, tau);
        let beat = 2000.5 * s.bin_hz();
        s.sensor = Sensor::nv(1.5e9 + beat - 0.3 * rabi / TAU);
        let sig = SignalField::new(rabi / GAMMA_NV, 1.5e9 + beat, -1.0).unwrap();
        let spec = s.spectrum(&sig);
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let p = InteractionParams::from_signal(&sig, &s.sensor, tau).unwrap();
        let ph = estimate_phase(&spec, &fit, Some(&p), 1).unwrap();
        assert!(normalize_phase(ph.correction_rad - ph.theta_rad.unwrap() - PI).abs() < 1e-9);
        assert!(normalize_phase(ph.phase_rad + 1.0).abs() < 1e-3);
    }

    #[test]
    fn self_calibration_and_linearity() {
        let rabi = TAU * 20e3;
        let s = Setup::new(40_000, 1e-6);
        let beat = 150.5 * s.bin_hz();
        let sig = SignalField::new(rabi / GAMMA_NV, 1.5e9 + beat, 0.2).unwrap();
        let spec = s.spectrum(&sig);
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let reference = InteractionParams::from_signal(&sig, &s.sensor, 1e-6).unwrap();
        let cal = calibrate_amplitude(&fit, s.n, &reference, GAMMA_NV, 1.0).unwrap();
        let det = s.sensor.detuning(sig.frequency_hz);
        let back = estimate_amplitude(&fit, s.n, &cal, 1e-6, det).unwrap();
        assert!((back.field_t - sig.amplitude_t).abs() / sig.amplitude_t < 1e-9);

        let half = SignalField::new(0.5 * sig.amplitude_t, sig.frequency_hz, 0.2).unwrap();
        let spec = s.spectrum(&half);
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let est = estimate_amplitude(&fit, s.n, &cal, 1e-6, det).unwrap();
        assert!((est.field_t / sig.amplitude_t - 0.5).abs() < 0.01);
    }

    #[test]
    fn amplitude_branch_beyond_quarter_turn() {
        // reference at Ω₀τ = 2 rad sits on the falling branch (π/2, π)
        let tau = 1e-6;
        let s = Setup::new(40_000, tau);
        let beat = 150.5 * s.bin_hz();
        let f = |rabi: f64| SignalField::new(rabi / GAMMA_NV, 1.5e9 + beat, 0.0).unwrap();
        let spec = s.spectrum(&f(2.0 / tau));
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let reference = InteractionParams::new(2.0 / tau, 0.0, tau).unwrap();
        let cal = calibrate_amplitude(&fit, s.n, &reference, GAMMA_NV, 1.0).unwrap();
        let spec = s.spectrum(&f(2.5 / tau));
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let est = estimate_amplitude(&fit, s.n, &cal, tau, 0.0).unwrap();
        assert!((est.rabi_rad_per_s * tau - 2.5).abs() < 1e-3);
        assert!((est.branch_rad_per_s.0 * tau - FRAC_PI_2).abs() < 1e-6);
        assert!((est.branch_rad_per_s.1 * tau - PI).abs() < 1e-6);
        // the same peak height read against a small-angle reference lands below π/2
        let small = AmplitudeCalibration {
            reference_rabi_rad_per_s: 0.5 / tau,
            ..cal
        };
        let est = estimate_amplitude(&fit, s.n, &small, tau, 0.0).unwrap();
        assert!((est.rabi_rad_per_s * tau - (PI - 2.5)).abs() < 1e-3);
    }

    #[test]
    fn out_of_range_contrast() {
        let tau = 1e-6;
        let s = Setup::new(40_000, tau);
        let sig = SignalField::new(0.3 / tau / GAMMA_NV, 1.5e9 + 150.5 * s.bin_hz(), 0.0).unwrap();
        let fit = fit_peak(&s.spectrum(&sig), &FitOptions::default()).unwrap();
        let cal = AmplitudeCalibration {
            peak_per_contrast: fit.amplitude / (s.n as f64 * 0.5),
            reference_rabi_rad_per_s: 0.3 / tau,
            gamma_rad_per_s_per_t: GAMMA_NV,
            damping: 1.0,
        };
        // a peak claiming more than full contrast cannot be inverted
        let mut big = fit;
        big.amplitude *= 2.5;
        assert!(matches!(
            estimate_amplitude(&big, s.n, &cal, tau, 0.0),
            Err(SpectralError::OutOfDynamicRange { .. })
        ));
    }

    #[test]
    fn noise_floor_of_exact_lorentzian() {
        let shape = |m: f64| 80.0 * 4.0 / ((m - 120.25).powi(2) + 4.0) + 0.5;
        let spec = Spectrum {
            bins: (0..401).map(|m| num_complex::Complex64::new(0.0, shape(m as f64))).collect(),
            bin_width_hz: 2.0,
            sample_rate_hz: 1600.0,
            n_samples: 800,
        };
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let nf = noise_floor(&spec, &fit, None, None);
        assert!(nf.raw_rms < 1e-9 * 80.0, "{}", nf.raw_rms);
        assert!(nf.field_t.is_none());
        let wide = noise_floor(&spec, &fit, Some((1, 401)), None);
        assert!(wide.raw_rms < 1e-9 * 80.0);
    }

    #[test]
    fn single_and_triple_peaks() {
        let s = Setup::new(40_000, 1e-6);
        let bw = s.bin_hz();
        let one = SignalField::new(1e-6, 1.5e9 + 300.5 * bw, 0.0).unwrap();
        let spec = s.spectrum(&one);
        assert_eq!(find_peaks(&spec, 8.0, &FitOptions::default()).len(), 1);

        let tones: Vec<SignalField> = [100.5, 300.5, 310.5]
            .iter()
            .map(|b| SignalField::new(1e-6, 1.5e9 + b * bw, 0.4).unwrap())
            .collect();
        let (p, _) = crate::trace::multi_tone_series(&tones, &s.sensor, &s.cfg, &s.lo, s.n).unwrap();
        let rate: Vec<f64> = p.iter().map(|&x| s.sensor.photon_mean(x)).collect();
        let spec = Spectrum::from_samples(&rate, 2e-6).unwrap();
        let peaks = find_peaks(&spec, 8.0, &FitOptions::default());
        assert_eq!(peaks.len(), 3, "{peaks:?}");
        for (pk, b) in peaks.iter().zip([100.5, 300.5, 310.5]) {
            let fit = pk.fit.expect("each peak is fitted");
            assert!((fit.center_bin() - b).abs() < 0.2);
        }
    }

    #[test]
    fn reconstruct_end_to_end() {
        let rabi = TAU * 30e3;
        let s = Setup::new(40_000, 1e-6);
        let beat = 1500.5 * s.bin_hz();
        let sig = SignalField::new(rabi / GAMMA_NV, 1.5e9 + beat, 0.9).unwrap();
        let spec = s.spectrum(&sig);
        let fit = fit_peak(&spec, &FitOptions::default()).unwrap();
        let reference = InteractionParams::from_signal(&sig, &s.sensor, 1e-6).unwrap();
        let cal = calibrate_amplitude(&fit, s.n, &reference, GAMMA_NV, 1.0).unwrap();
        let opts = ReconstructOptions {
            calibration: Some(cal),
            beat_sign: Some(1),
            ..ReconstructOptions::default()
        };
        let r = reconstruct(&spec, &s.lo, &s.sensor, 1e-6, &opts).unwrap();
        assert!((r.frequency_hz - sig.frequency_hz).abs() < 0.05 * s.bin_hz());
        assert!((r.amplitude_t.unwrap() - sig.amplitude_t).abs() / sig.amplitude_t < 1e-6);
        assert!(normalize_phase(r.phase_rad - 0.9).abs() < 1e-3);
        assert!(r.sign_resolved);
        assert!((-PI..PI).contains(&r.phase_rad));
    }
}
