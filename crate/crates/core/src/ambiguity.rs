//! Second-measurement disambiguation.
//!
//! One trace leaves three things open: the sign of the beat, which multiple of
//! `1/T_L` separates the signal from the LO, and which rotation branch produced the
//! observed contrast. Each is settled by repeating the measurement with one setting
//! changed: the LO frequency, the sequence length or the interaction time.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lo::LocalOscillator;
use crate::physics::{
    contrast, dephasing_factor, normalize_phase, InteractionParams, PhysicsError, Sensor,
    SignalField,
};
use crate::spectral::{
    estimate_phase, fft_trace, fit_peak, AmplitudeCalibration, FitOptions, LorentzianFit,
    SpectralError, Spectrum,
};
use crate::trace::PhotonTrace;

/// Decision margins are this many combined 95 % intervals.
pub const MARGIN_CIS: f64 = 3.0;
/// A Lorentzian fitted to the sinc-shaped line of an off-grid tone misplaces the
/// centre by up to about a tenth of a bin. A measured beat is only declared
/// inconsistent with every hypothesis beyond this allowance per measurement.
pub const LINESHAPE_BINS: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmbiguityError {
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("candidates N = {best} and N = {runner_up} differ by {margin_hz} Hz, within the {noise_hz} Hz margin")]
    Indistinguishable {
        best: i64,
        runner_up: i64,
        margin_hz: f64,
        noise_hz: f64,
    },
    #[error("amplitude candidates {best} and {runner_up} rad/s agree within noise at every τ")]
    Unresolved { best: f64, runner_up: f64 },
    #[error("validity condition violated: {0}")]
    ValidityViolated(String),
    #[error("invalid measurement pair: {0}")]
    InvalidPair(String),
    #[error("amplitude resolution needs a calibration")]
    MissingCalibration,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Summary of one analysed trace, enough for every resolver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub lo: LocalOscillator,
    pub tau_s: f64,
    pub n_samples: usize,
    /// |δ| from the Lorentzian centre.
    pub beat_hz: f64,
    pub beat_ci_hz: f64,
    /// Fitted `L₀`.
    pub peak: f64,
    /// 95 % shot-noise interval of `L₀`. The lineshape misfit is left out: it is the
    /// same for every measurement at one beat and record length and cancels in ratios.
    pub peak_ci: f64,
    /// Interpolated spectrum argument at the centre.
    pub beat_phase_rad: f64,
    pub phase_ci_rad: f64,
    pub bin_width_hz: f64,
}

impl Measurement {
    pub fn from_spectrum(
        spec: &Spectrum,
        lo: &LocalOscillator,
        tau_s: f64,
        opts: &FitOptions,
    ) -> Result<Self, AmbiguityError> {
        let fit = fit_peak(spec, opts)?;
        let phase = estimate_phase(spec, &fit, None, 1)?;
        // rescale the fit interval from the residual variance to the shot-noise one
        let n_fit = (fit.window_end - fit.window_start) as f64;
        let s2 = fit.residual_noise.powi(2) * (n_fit - 1.0) / (n_fit - 4.0);
        let peak_ci = if s2 > 0.0 {
            fit.ci95.amplitude * (0.5 * off_peak_power(spec, &fit) / s2).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            lo: *lo,
            tau_s,
            n_samples: spec.n_samples,
            beat_hz: fit.center_hz,
            beat_ci_hz: fit.ci95.center_hz,
            peak: fit.amplitude,
            peak_ci,
            beat_phase_rad: phase.beat_phase_rad,
            phase_ci_rad: phase.ci_rad,
            bin_width_hz: spec.bin_width_hz,
        })
    }

    pub fn from_trace(trace: &PhotonTrace, opts: &FitOptions) -> Result<Self, AmbiguityError> {
        let spec = fft_trace(trace)?;
        Self::from_spectrum(&spec, &trace.lo, trace.config.tau_s, opts)
    }

    /// Contrast implied by the peak under `calibration`, with its interval.
    pub fn contrast(&self, calibration: &AmplitudeCalibration) -> (f64, f64) {
        let scale = calibration.peak_per_contrast * self.n_samples as f64;
        (self.peak / scale, self.peak_ci / scale)
    }
}

/// Complex noise power per bin, `E|X|²`, from the median off-peak `|X|²` (the
/// median of an exponential variate is `ln 2` times its mean).
fn off_peak_power(spec: &Spectrum, fit: &LorentzianFit) -> f64 {
    let guard = fit.window_end - fit.window_start;
    let lo = fit.window_start.saturating_sub(guard);
    let hi = fit.window_end + guard;
    let mut power: Vec<f64> = (1..spec.len())
        .filter(|m| *m < lo || *m >= hi)
        .map(|m| spec.bins[m].norm_sqr())
        .collect();
    if power.is_empty() {
        return 0.0;
    }
    let mid = power.len() / 2;
    let (_, median, _) = power.select_nth_unstable_by(mid, f64::total_cmp);
    *median / std::f64::consts::LN_2
}

/// The one setting changed for the second measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Modification {
    /// `ν̃_LO = ν_LO − δν`.
    LoShift { delta_nu_hz: f64 },
    /// `T̃_L = T_L + δT_L` with the LO frequency held.
    SequenceStretch { delta_t_l_s: f64 },
    TauChange { tau_s: f64 },
}

impl Modification {
    /// LO of the second measurement.
    pub fn apply_lo(&self, lo: &LocalOscillator) -> LocalOscillator {
        match *self {
            Modification::LoShift { delta_nu_hz } => lo.shifted(-delta_nu_hz),
            Modification::SequenceStretch { delta_t_l_s } => LocalOscillator::with_frequency(
                lo.lo_frequency_hz(),
                lo.sequence_length_s + delta_t_l_s,
            ),
            Modification::TauChange { .. } => *lo,
        }
    }

    pub fn apply_tau(&self, tau_s: f64) -> f64 {
        match *self {
            Modification::TauChange { tau_s } => tau_s,
            _ => tau_s,
        }
    }

    fn kind(&self) -> usize {
        match self {
            Modification::LoShift { .. } => 0,
            Modification::SequenceStretch { .. } => 1,
            Modification::TauChange { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementPair {
    pub first: Measurement,
    pub second: Measurement,
    pub modification: Modification,
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

impl MeasurementPair {
    /// Checks that exactly the stated setting differs.
    pub fn new(
        first: Measurement,
        second: Measurement,
        modification: Modification,
    ) -> Result<Self, AmbiguityError> {
        let pair = Self {
            first,
            second,
            modification,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), AmbiguityError> {
        let (a, b) = (&self.first, &self.second);
        let expected_lo = self.modification.apply_lo(&a.lo);
        let expected_tau = self.modification.apply_tau(a.tau_s);
        let freq_tol = 1e-6 * a.lo.sample_rate_hz();
        if !close(b.lo.sequence_length_s, expected_lo.sequence_length_s, 1e-12) {
            return Err(AmbiguityError::InvalidPair(format!(
                "second sequence length {} s, expected {} s",
                b.lo.sequence_length_s, expected_lo.sequence_length_s
            )));
        }
        if (b.lo.lo_frequency_hz() - expected_lo.lo_frequency_hz()).abs() > freq_tol {
            return Err(AmbiguityError::InvalidPair(format!(
                "second LO at {} Hz, expected {} Hz",
                b.lo.lo_frequency_hz(),
                expected_lo.lo_frequency_hz()
            )));
        }
        if !close(b.tau_s, expected_tau, 1e-12) {
            return Err(AmbiguityError::InvalidPair(format!(
                "second interaction time {} s, expected {} s",
                b.tau_s, expected_tau
            )));
        }
        let unchanged = match self.modification {
            Modification::LoShift { delta_nu_hz } => delta_nu_hz == 0.0,
            Modification::SequenceStretch { delta_t_l_s } => delta_t_l_s == 0.0,
            Modification::TauChange { tau_s } => close(tau_s, a.tau_s, 1e-12),
        };
        if unchanged {
            return Err(AmbiguityError::Inconclusive(
                "the second measurement repeats the first".into(),
            ));
        }
        Ok(())
    }

    fn beat_noise_hz(&self) -> f64 {
        MARGIN_CIS * self.first.beat_ci_hz.hypot(self.second.beat_ci_hz)
    }

    fn lineshape_hz(&self) -> f64 {
        LINESHAPE_BINS * (self.first.bin_width_hz + self.second.bin_width_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignResolution {
    pub sign: i8,
    /// Distance of δ̃ from `δ + δν` and from `|δ − δν|`.
    pub residual_positive_hz: f64,
    pub residual_negative_hz: f64,
    pub margin_hz: f64,
    pub noise_hz: f64,
}

/// Sign of δ₀ from a measurement with the LO lowered by δν.
///
/// A signal above the LO beats faster against the lowered LO (`δ + δν`), one below
/// beats slower (`|δ − δν|`).
pub fn resolve_sign(pair: &MeasurementPair) -> Result<SignResolution, AmbiguityError> {
    let Modification::LoShift { delta_nu_hz } = pair.modification else {
        return Err(AmbiguityError::InvalidPair("sign resolution needs an LO shift".into()));
    };
    if delta_nu_hz == 0.0 {
        return Err(AmbiguityError::Inconclusive("LO shift is zero".into()));
    }
    let delta = pair.first.beat_hz;
    let nyquist = pair.first.lo.nyquist_hz();
    if delta_nu_hz.abs() >= nyquist - delta {
        return Err(AmbiguityError::ValidityViolated(format!(
            "|δν| = {} Hz must stay below 1/(2T_L) − δ = {} Hz",
            delta_nu_hz.abs(),
            nyquist - delta
        )));
    }
    let measured = pair.second.beat_hz;
    let up = (measured - (delta + delta_nu_hz)).abs();
    let down = (measured - (delta - delta_nu_hz).abs()).abs();
    let noise = pair.beat_noise_hz();
    if up <= noise && down <= noise {
        return Err(AmbiguityError::Inconclusive(format!(
            "shifted beat {measured} Hz lies within {noise} Hz of both {} and {} Hz",
            delta + delta_nu_hz,
            (delta - delta_nu_hz).abs()
        )));
    }
    if up.min(down) > noise + pair.lineshape_hz() {
        return Err(AmbiguityError::Inconclusive(format!(
            "shifted beat {measured} Hz matches neither {} nor {} Hz within {noise} Hz",
            delta + delta_nu_hz,
            (delta - delta_nu_hz).abs()
        )));
    }
    Ok(SignResolution {
        sign: if up <= down { 1 } else { -1 },
        residual_positive_hz: up,
        residual_negative_hz: down,
        margin_hz: (up - down).abs(),
        noise_hz: noise,
    })
}

/// Beat modulation `Δδ^(N) = N·δT_L/(T_L·T̃_L)` for `|N·δT_L/T_L| < 1`.
pub fn alias_shift(n: i64, t_l: f64, delta_t_l: f64) -> Result<f64, AmbiguityError> {
    let stretched = t_l + delta_t_l;
    if !(t_l > 0.0 && stretched > 0.0) {
        return Err(AmbiguityError::ValidityViolated(format!(
            "sequence lengths {t_l} s and {stretched} s must be positive"
        )));
    }
    let ratio = n as f64 * delta_t_l / t_l;
    if ratio.abs() >= 1.0 {
        return Err(AmbiguityError::ValidityViolated(format!(
            "|N·δT_L/T_L| = {} is not below 1",
            ratio.abs()
        )));
    }
    Ok(n as f64 * delta_t_l / (t_l * stretched))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AliasPrediction {
    pub shift_hz: f64,
    /// `|δ̃ + Δδ^(N)|` with δ̃ signed.
    pub beat_hz: f64,
    /// False when the shifted beat leaves `(0, 1/(2T̃_L))` on the side of δ̃, where
    /// the modulo branch changes and the closed form no longer holds.
    pub in_band: bool,
}

/// Closed-form second beat for image `N`, given the signed beat `δ̃` of `N = 0`.
pub fn predict_alias(
    base_signed_hz: f64,
    n: i64,
    t_l: f64,
    delta_t_l: f64,
) -> Result<AliasPrediction, AmbiguityError> {
    let shift = alias_shift(n, t_l, delta_t_l)?;
    let shifted = base_signed_hz + shift;
    let nyquist = 0.5 / (t_l + delta_t_l);
    let in_band = if base_signed_hz >= 0.0 {
        shifted > 0.0 && shifted < nyquist
    } else {
        shifted < 0.0 && shifted > -nyquist
    };
    Ok(AliasPrediction {
        shift_hz: shift,
        beat_hz: shifted.abs(),
        in_band,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AliasScore {
    pub n: i64,
    /// Second beat of `ν_LO + δ + N/T_L` from the full sawtooth.
    pub predicted_hz: f64,
    /// The closed form, when its validity condition holds.
    pub formula: Option<AliasPrediction>,
    pub residual_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AliasResolution {
    pub n: i64,
    pub residual_hz: f64,
    /// Runner-up residual minus the best; absent for a single candidate.
    pub margin_hz: Option<f64>,
    pub noise_hz: f64,
    pub candidates: Vec<AliasScore>,
}

/// Image index `N` from a measurement with a stretched sequence.
///
/// Candidates are labelled `ν_LO + s(δ + N/T_L)`; both signs of a label give the
/// same second beat, so the sign stays open.
pub fn resolve_alias(
    pair: &MeasurementPair,
    n_range: (i64, i64),
) -> Result<AliasResolution, AmbiguityError> {
    let Modification::SequenceStretch { delta_t_l_s } = pair.modification else {
        return Err(AmbiguityError::InvalidPair("alias resolution needs a sequence stretch".into()));
    };
    let (lo_n, hi_n) = n_range;
    if lo_n > hi_n {
        return Err(AmbiguityError::InvalidPair(format!("empty range {lo_n}..={hi_n}")));
    }
    let t_l = pair.first.lo.sequence_length_s;
    let nu_lo = pair.first.lo.lo_frequency_hz();
    let delta = pair.first.beat_hz;
    let second_lo = pair.second.lo;
    let base_signed = second_lo.beat_note(nu_lo + delta).signed_hz;
    let measured = pair.second.beat_hz;

    let mut candidates: Vec<AliasScore> = (lo_n..=hi_n)
        .map(|n| {
            let predicted = second_lo.beat_note(nu_lo + delta + n as f64 / t_l).magnitude_hz;
            AliasScore {
                n,
                predicted_hz: predicted,
                formula: predict_alias(base_signed, n, t_l, delta_t_l_s).ok(),
                residual_hz: (measured - predicted).abs(),
            }
        })
        .collect();
    candidates.sort_by(|a, b| a.residual_hz.total_cmp(&b.residual_hz));
    let noise = pair.beat_noise_hz();
    let best = candidates[0];
    // a single candidate is taken as given
    if candidates.len() > 1 && best.residual_hz > noise + pair.lineshape_hz() {
        return Err(AmbiguityError::Inconclusive(format!(
            "stretched beat {measured} Hz is {} Hz from the nearest prediction (noise {noise} Hz)",
            best.residual_hz
        )));
    }
    let margin = candidates.get(1).map(|r| r.residual_hz - best.residual_hz);
    if let (Some(m), Some(r)) = (margin, candidates.get(1)) {
        if m <= noise {
            return Err(AmbiguityError::Indistinguishable {
                best: best.n,
                runner_up: r.n,
                margin_hz: m,
                noise_hz: noise,
            });
        }
    }
    candidates.sort_by_key(|c| c.n);
    Ok(AliasResolution {
        n: best.n,
        residual_hz: best.residual_hz,
        margin_hz: margin,
        noise_hz: noise,
        candidates,
    })
}

/// Contrast of a drive as a function of Ω₀ at fixed Δ and τ.
fn contrast_at(rabi: f64, detuning: f64, tau: f64) -> f64 {
    InteractionParams::new(rabi, detuning, tau)
        .map(|p| contrast(&p))
        .unwrap_or(0.0)
}

/// Every Ω₀ in `(0, omega_max]` whose contrast at `τ` equals `target`.
///
/// Crossings are bracketed on a grid of `0.005/τ` and bisected. Grid minima of the
/// mismatch that stay within `touch` without crossing (a turning point of the
/// curve grazing the target) are refined and kept as well.
pub fn amplitude_candidates(
    target: f64,
    detuning: f64,
    tau: f64,
    omega_max: f64,
    touch: f64,
) -> Vec<f64> {
    let f = |w: f64| contrast_at(w, detuning, tau) - target;
    let steps = ((omega_max * tau / 0.005).ceil() as usize).max(16);
    let h = omega_max / steps as f64;
    let grid: Vec<(f64, f64)> = (1..=steps).map(|i| (i as f64 * h, f(i as f64 * h))).collect();
    let mut roots = Vec::new();
    for i in 0..grid.len() {
        let (x, y) = grid[i];
        if y == 0.0 {
            roots.push(x);
            continue;
        }
        if let Some(&(x1, y1)) = grid.get(i + 1) {
            if y1 != 0.0 && y.signum() != y1.signum() {
                let (mut a, mut b, fa) = (x, x1, y);
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if f(m).signum() == fa.signum() {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                roots.push(0.5 * (a + b));
                continue;
            }
        }
        let prev = if i > 0 { grid[i - 1].1 } else { f(0.0) };
        let next = grid.get(i + 1).map(|g| g.1);
        let local_min = y.abs() <= prev.abs() && next.is_none_or(|n| y.abs() <= n.abs());
        let no_crossing = prev.signum() == y.signum() && next.is_none_or(|n| n.signum() == y.signum());
        if local_min && no_crossing {
            let (mut a, mut b) = ((x - h).max(0.0), (x + h).min(omega_max));
            for _ in 0..100 {
                let m1 = a + (b - a) / 3.0;
                let m2 = b - (b - a) / 3.0;
                if f(m1).abs() < f(m2).abs() {
                    b = m2;
                } else {
                    a = m1;
                }
            }
            let w = 0.5 * (a + b);
            if f(w).abs() <= touch {
                roots.push(w);
            }
        }
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * omega_max);
    roots
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeResolution {
    pub rabi_rad_per_s: f64,
    pub field_t: f64,
    pub field_ci_t: f64,
    pub omega_max_rad_per_s: f64,
    pub tau_s: Vec<f64>,
    pub measured_contrast: Vec<f64>,
    pub candidates: Vec<AmplitudeCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeCandidate {
    pub rabi_rad_per_s: f64,
    pub field_t: f64,
    pub score: f64,
    pub predicted_contrast: Vec<f64>,
}

/// Settings shared by the amplitude resolver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeContext {
    pub calibration: AmplitudeCalibration,
    pub detuning_rad_per_s: f64,
    /// Candidate search bound; defaults to the π rotation at the shortest τ.
    #[serde(default)]
    pub omega_max_rad_per_s: Option<f64>,
    /// Apply `exp(−τ/T₂*)` to each predicted contrast.
    #[serde(default)]
    pub t2_star_s: Option<f64>,
}

/// Rotation branch from peaks at several interaction times.
///
/// Candidates come from the first measurement; each is scored by the squared
/// contrast error over all measurements. The fit is unresolved when the runner-up
/// predicts every measurement within its margin.
pub fn resolve_amplitude(
    measurements: &[Measurement],
    ctx: &AmplitudeContext,
) -> Result<AmplitudeResolution, AmbiguityError> {
    let Some(reference) = measurements.first() else {
        return Err(AmbiguityError::InvalidPair("no measurements".into()));
    };
    let cal = &ctx.calibration;
    if !(cal.peak_per_contrast > 0.0 && cal.gamma_rad_per_s_per_t > 0.0) {
        return Err(AmbiguityError::MissingCalibration);
    }
    let taus: Vec<f64> = measurements.iter().map(|m| m.tau_s).collect();
    let tau_min = taus.iter().copied().fold(f64::INFINITY, f64::min);
    if tau_min.is_nan() || tau_min <= 0.0 {
        return Err(AmbiguityError::InvalidPair("interaction times must be positive".into()));
    }
    let omega_max = ctx.omega_max_rad_per_s.unwrap_or(PI / tau_min);
    let damping = |tau: f64| ctx.t2_star_s.map_or(1.0, |t2| dephasing_factor(tau, t2));
    let measured: Vec<(f64, f64)> = measurements.iter().map(|m| m.contrast(cal)).collect();
    let (c_ref, ci_ref) = measured[0];
    let d_ref = damping(reference.tau_s);
    let touch = (MARGIN_CIS * ci_ref / d_ref).max(1e-9);
    let roots = amplitude_candidates(
        c_ref / d_ref,
        ctx.detuning_rad_per_s,
        reference.tau_s,
        omega_max,
        touch,
    );
    if roots.is_empty() {
        return Err(AmbiguityError::Spectral(SpectralError::OutOfDynamicRange {
            measured: c_ref,
            low: 0.0,
            high: d_ref,
        }));
    }

    let gamma = cal.gamma_rad_per_s_per_t;
    let mut candidates: Vec<AmplitudeCandidate> = roots
        .iter()
        .map(|&w| {
            let predicted: Vec<f64> = taus
                .iter()
                .map(|&t| contrast_at(w, ctx.detuning_rad_per_s, t) * damping(t))
                .collect();
            let score = predicted
                .iter()
                .zip(&measured)
                .map(|(p, (c, _))| (c - p).powi(2))
                .sum();
            AmplitudeCandidate {
                rabi_rad_per_s: w,
                field_t: w / gamma,
                score,
                predicted_contrast: predicted,
            }
        })
        .collect();
    candidates.sort_by(|a, b| a.score.total_cmp(&b.score));

    if candidates.len() > 1 {
        let (best, second) = (&candidates[0], &candidates[1]);
        let separable = best
            .predicted_contrast
            .iter()
            .zip(&second.predicted_contrast)
            .zip(&measured)
            .any(|((a, b), (_, ci))| (a - b).abs() > MARGIN_CIS * ci.max(1e-12));
        if !separable {
            return Err(AmbiguityError::Unresolved {
                best: best.rabi_rad_per_s,
                runner_up: second.rabi_rad_per_s,
            });
        }
    }

    let w = candidates[0].rabi_rad_per_s;
    let h = 1e-6 * w.max(1.0 / reference.tau_s);
    let slope = (contrast_at(w + h, ctx.detuning_rad_per_s, reference.tau_s)
        - contrast_at((w - h).max(0.0), ctx.detuning_rad_per_s, reference.tau_s))
        / (w + h - (w - h).max(0.0))
        * d_ref;
    let field_ci_t = if slope != 0.0 {
        ci_ref / slope.abs() / gamma
    } else {
        f64::MAX
    };
    Ok(AmplitudeResolution {
        rabi_rad_per_s: w,
        field_t: w / gamma,
        field_ci_t,
        omega_max_rad_per_s: omega_max,
        tau_s: taus,
        measured_contrast: measured.iter().map(|m| m.0).collect(),
        candidates,
    })
}

/// Settings for [`resolve_all`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolveContext {
    pub sensor: Sensor,
    pub calibration: AmplitudeCalibration,
    /// Image indices searched when a stretched pair is present.
    #[serde(default = "default_n_range")]
    pub n_range: (i64, i64),
    #[serde(default)]
    pub omega_max_rad_per_s: Option<f64>,
    #[serde(default)]
    pub dephasing: bool,
}

fn default_n_range() -> (i64, i64) {
    (-2, 2)
}

/// The signal with the record of how each ambiguity was settled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSignal {
    pub signal: SignalField,
    pub frequency_ci_hz: f64,
    pub amplitude_ci_t: f64,
    pub phase_ci_rad: f64,
    pub beat_sign: i8,
    pub alias_n: i64,
    /// `None` when no LO-shifted pair was given and a positive beat was assumed.
    pub sign: Option<SignResolution>,
    pub alias: Option<AliasResolution>,
    pub amplitude: AmplitudeResolution,
    /// Offset removed from the beat phase, `arg(A − iB)` of the resolved drive.
    pub phase_correction_rad: f64,
}

/// Sign, then image index, then rotation branch, then phase.
///
/// All pairs must share their first measurement; pairs are dispatched by the
/// setting they change, so their order does not matter.
pub fn resolve_all(
    pairs: &[MeasurementPair],
    ctx: &ResolveContext,
) -> Result<ResolvedSignal, AmbiguityError> {
    let Some(base) = pairs.first().map(|p| p.first) else {
        return Err(AmbiguityError::InvalidPair("no measurement pairs".into()));
    };
    let mut by_kind: [Option<&MeasurementPair>; 3] = [None; 3];
    for pair in pairs {
        pair.validate()?;
        let f = &pair.first;
        // half a bin of lineshape bias on top of the fit intervals
        let tol = MARGIN_CIS * f.beat_ci_hz.hypot(base.beat_ci_hz) + 0.5 * base.bin_width_hz;
        if f.lo != base.lo || f.tau_s != base.tau_s || (f.beat_hz - base.beat_hz).abs() > tol {
            return Err(AmbiguityError::Inconclusive(format!(
                "pairs disagree on the first measurement: beat {} Hz vs {} Hz (tolerance {} Hz)",
                f.beat_hz, base.beat_hz, tol
            )));
        }
        let slot = &mut by_kind[pair.modification.kind()];
        if slot.is_some() {
            return Err(AmbiguityError::InvalidPair(
                "more than one pair changes the same setting".into(),
            ));
        }
        *slot = Some(pair);
    }

    let sign = by_kind[0].map(resolve_sign).transpose()?;
    let alias = by_kind[1]
        .map(|p| resolve_alias(p, ctx.n_range))
        .transpose()?;
    let s = sign.map_or(1, |r| r.sign);
    let n = alias.as_ref().map_or(0, |r| r.n);
    let offset = base.beat_hz + n as f64 / base.lo.sequence_length_s;
    let frequency = base.lo.lo_frequency_hz() + f64::from(s) * offset;
    let detuning = ctx.sensor.detuning(frequency);

    let mut measurements = vec![base];
    measurements.extend(by_kind[2].map(|p| p.second));
    let amplitude = resolve_amplitude(
        &measurements,
        &AmplitudeContext {
            calibration: ctx.calibration,
            detuning_rad_per_s: detuning,
            omega_max_rad_per_s: ctx.omega_max_rad_per_s,
            t2_star_s: ctx.dephasing.then_some(ctx.sensor.t2_star_s),
        },
    )?;

    let params = InteractionParams::new(amplitude.rabi_rad_per_s, detuning, base.tau_s)?;
    let correction = params.beat_phasor().arg();
    let phase = normalize_phase(f64::from(s) * (base.beat_phase_rad - PI) - correction);
    Ok(ResolvedSignal {
        signal: SignalField::new(amplitude.field_t, frequency, phase)?,
        frequency_ci_hz: base.beat_ci_hz,
        amplitude_ci_t: amplitude.field_ci_t,
        phase_ci_rad: base.phase_ci_rad,
        beat_sign: s,
        alias_n: n,
        sign,
        alias,
        amplitude,
        phase_correction_rad: correction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::GAMMA_NV;
    use proptest::prelude::*;

    fn measurement(lo: LocalOscillator, tau: f64, beat: f64) -> Measurement {
        Measurement {
            lo,
            tau_s: tau,
            n_samples: 100_000,
            beat_hz: beat,
            beat_ci_hz: 1.0,
            peak: 1000.0,
            peak_ci: 1.0,
            beat_phase_rad: 0.0,
            phase_ci_rad: 0.01,
            bin_width_hz: 5.0,
        }
    }

    fn lo() -> LocalOscillator {
        LocalOscillator::from_resonance(1.5e9, 2e-6)
    }

    fn shift_pair(beat: f64, shifted: f64, dnu: f64) -> MeasurementPair {
        let m = Modification::LoShift { delta_nu_hz: dnu };
        MeasurementPair {
            first: measurement(lo(), 1e-6, beat),
            second: measurement(m.apply_lo(&lo()), 1e-6, shifted),
            modification: m,
        }
    }

    #[test]
    fn sign_examples() {
        let lo = lo();
        let dnu = 5e3;
        let shifted = Modification::LoShift { delta_nu_hz: dnu }.apply_lo(&lo);
        // the shifted beats come from the sawtooth itself
        let above = shifted.beat_note(lo.lo_frequency_hz() + 20e3).magnitude_hz;
        let below = shifted.beat_note(lo.lo_frequency_hz() - 20e3).magnitude_hz;
        assert!((above - 25e3).abs() < 1e-6);
        assert!((below - 15e3).abs() < 1e-6);
        assert_eq!(resolve_sign(&shift_pair(20e3, above, dnu)).unwrap().sign, 1);
        let r = resolve_sign(&shift_pair(20e3, below, dnu)).unwrap();
        assert_eq!(r.sign, -1);
        assert!((r.margin_hz - 10e3).abs() < 1e-6);
    }

    #[test]
    fn sign_degenerate_and_invalid() {
        assert!(matches!(
            resolve_sign(&shift_pair(20e3, 20e3, 0.0)),
            Err(AmbiguityError::Inconclusive(_))
        ));
        // a shift so small that both hypotheses sit inside the noise
        assert!(matches!(
            resolve_sign(&shift_pair(20e3, 20e3, 1.0)),
            Err(AmbiguityError::Inconclusive(_))
        ));
        assert!(matches!(
            resolve_sign(&shift_pair(20e3, 25e3, 240e3)),
            Err(AmbiguityError::ValidityViolated(_))
        ));
    }

    #[test]
    fn pair_validation() {
        let first = measurement(lo(), 1e-6, 20e3);
        let stretch = Modification::SequenceStretch { delta_t_l_s: 20e-9 };
        let ok = measurement(stretch.apply_lo(&lo()), 1e-6, 20e3);
        assert!(MeasurementPair::new(first, ok, stretch).is_ok());
        // τ changed as well
        let bad = Measurement { tau_s: 2e-6, ..ok };
        assert!(matches!(
            MeasurementPair::new(first, bad, stretch),
            Err(AmbiguityError::InvalidPair(_))
        ));
        // stretched without holding the LO frequency
        let drifted = LocalOscillator {
            sequence_length_s: 2.02e-6,
            n_lo: 3031,
            shift_hz: 0.0,
        };
        let drifted = measurement(drifted, 1e-6, 20e3);
        assert!(MeasurementPair::new(first, drifted, stretch).is_err());
        let tau = Modification::TauChange { tau_s: 1.5e-6 };
        let t = Measurement { tau_s: 1.5e-6, ..first };
        assert!(MeasurementPair::new(first, t, tau).is_ok());
    }

    #[test]
    fn alias_shift_examples() {
        assert_eq!(alias_shift(0, 2e-6, 20e-9).unwrap(), 0.0);
        let one = alias_shift(1, 2e-6, 20e-9).unwrap();
        assert!((one - 2e-8 / (2e-6 * 2.02e-6)).abs() < 1e-9);
        assert!((one - 4950.495).abs() < 1e-3);
        assert_eq!(alias_shift(-1, 2e-6, 20e-9).unwrap(), -one);
        assert!(matches!(
            alias_shift(100, 2e-6, 20e-9),
            Err(AmbiguityError::ValidityViolated(_))
        ));
    }

    #[test]
    fn alias_shift_matches_sawtooth_difference() {
        let lo = lo();
        let second = LocalOscillator::with_frequency(lo.lo_frequency_hz(), 2.02e-6);
        let nu = lo.lo_frequency_hz() + 20e3;
        let diff = second.beat_note(nu + 1.0 / 2e-6).signed_hz - second.beat_note(nu).signed_hz;
        assert!((diff - alias_shift(1, 2e-6, 20e-9).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn predict_alias_flags_band_edges() {
        let p = predict_alias(20e3, 1, 2e-6, 20e-9).unwrap();
        assert!(p.in_band);
        assert!((p.beat_hz - 24950.495).abs() < 1e-2);
        // a beat near zero pushed through it changes branch
        let q = predict_alias(1e3, -1, 2e-6, 20e-9).unwrap();
        assert!(!q.in_band);
        let r = predict_alias(-20e3, 1, 2e-6, 20e-9).unwrap();
        assert!(r.in_band && (r.beat_hz - 15049.505).abs() < 1e-2);
    }

    fn stretch_pair(t_l: f64, dt: f64, nu: f64) -> MeasurementPair {
        let lo = LocalOscillator::from_resonance(1.5e9, t_l);
        let m = Modification::SequenceStretch { delta_t_l_s: dt };
        let second = m.apply_lo(&lo);
        MeasurementPair {
            first: measurement(lo, 1e-6, lo.beat_note(nu).magnitude_hz),
            second: measurement(second, 1e-6, second.beat_note(nu).magnitude_hz),
            modification: m,
        }
    }

    #[test]
    fn alias_single_and_selection() {
        let nu = 1.5e9 + 20e3 + 1.0 / 2e-6;
        let pair = stretch_pair(2e-6, 20e-9, nu);
        let single = resolve_alias(&pair, (0, 0)).unwrap();
        assert_eq!(single.n, 0);
        assert!(single.margin_hz.is_none());
        let r = resolve_alias(&pair, (-1, 1)).unwrap();
        assert_eq!(r.n, 1);
        assert!(r.residual_hz < 1e-6);
        assert!(r.margin_hz.unwrap() > 4000.0);
        for c in &r.candidates {
            let f = c.formula.expect("all three are valid here");
            assert!(f.in_band);
            assert!((f.beat_hz - c.predicted_hz).abs() < 1e-6);
        }
        // mirrored signal lands on the same label
        let mirrored = stretch_pair(2e-6, 20e-9, 2.0 * 1.5e9 - nu);
        assert_eq!(resolve_alias(&mirrored, (-1, 1)).unwrap().n, 1);
    }

    #[test]
    fn alias_indistinguishable_when_engineered() {
        // T̃_L = 1.5 T_L makes 2/T_L = 3/T̃_L, an exact alias of the stretched sampling
        let nu = 1.5e9 + 20e3;
        let pair = stretch_pair(2e-6, 1e-6, nu);
        assert!(matches!(
            resolve_alias(&pair, (0, 2)),
            Err(AmbiguityError::Indistinguishable { .. })
        ));
    }

    /// Closed-form branches of `|sin x| = s`: `x = kπ ± arcsin s`.
    fn closed_form(s: f64, tau: f64, omega_max: f64) -> Vec<f64> {
        let a = s.asin();
        let mut out = Vec::new();
        for k in 0..1000 {
            let base = PI * k as f64;
            for x in [base - a, base + a] {
                if x > 0.0 && x / tau <= omega_max {
                    out.push(x / tau);
                }
            }
            if base / tau > omega_max {
                break;
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * omega_max);
        out
    }

    proptest! {
        #[test]
        fn resonant_candidates_follow_the_arcsine_branches(
            s in 0.02f64..0.98,
            tau in 1e-8f64..1e-5,
            turns in 0.5f64..4.0,
        ) {
            let omega_max = turns * 2.0 * PI / tau;
            let found = amplitude_candidates(s, 0.0, tau, omega_max, 1e-9);
            let expected = closed_form(s, tau, omega_max);
            prop_assert_eq!(found.len(), expected.len(), "{:?} vs {:?}", found, expected);
            for (f, e) in found.iter().zip(&expected) {
                prop_assert!((f - e).abs() < 1e-9 * e, "{} vs {}", f, e);
            }
        }

        #[test]
        fn alias_shift_is_the_sawtooth_difference(
            t_l in 1e-6f64..5e-6,
            frac in -0.05f64..0.05,
            n in -5i64..=5,
            base in -0.45f64..0.45,
            nu_lo in 1e8f64..3e9,
        ) {
            let dt = frac * t_l;
            prop_assume!(n != 0 && (n as f64 * frac).abs() >= 1e-2 && (n as f64 * frac).abs() < 1.0);
            let second = LocalOscillator::with_frequency(nu_lo, t_l + dt);
            let nu = nu_lo + base / (t_l + dt);
            let b0 = second.beat_note(nu).signed_hz;
            let pred = predict_alias(b0, n, t_l, dt).unwrap();
            prop_assume!(pred.in_band);
            let diff = second.beat_note(nu + n as f64 / t_l).signed_hz - b0;
            prop_assert!((diff - pred.shift_hz).abs() <= 1e-9 * pred.shift_hz.abs(),
                "{} vs {}", diff, pred.shift_hz);
        }
    }

    fn calibration() -> AmplitudeCalibration {
        AmplitudeCalibration {
            peak_per_contrast: 0.05,
            reference_rabi_rad_per_s: 1.0,
            gamma_rad_per_s_per_t: GAMMA_NV,
            damping: 1.0,
        }
    }

    fn tau_measurement(rabi: f64, tau: f64) -> Measurement {
        let n = 100_000;
        Measurement {
            n_samples: n,
            peak: 0.05 * n as f64 * contrast_at(rabi, 0.0, tau),
            peak_ci: 0.05 * n as f64 * 1e-4,
            ..measurement(lo(), tau, 20e3)
        }
    }

    fn ctx(omega_max: Option<f64>) -> AmplitudeContext {
        AmplitudeContext {
            calibration: calibration(),
            detuning_rad_per_s: 0.0,
            omega_max_rad_per_s: omega_max,
            t2_star_s: None,
        }
    }

    #[test]
    fn singleton_is_returned_directly() {
        let tau = 1e-6;
        let rabi = 0.4 / tau;
        let r = resolve_amplitude(&[tau_measurement(rabi, tau)], &ctx(Some(1.2 / tau))).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert!((r.rabi_rad_per_s - rabi).abs() < 1e-9 * rabi);
        // the default bound keeps the π − x branch, which one τ cannot exclude
        assert!(matches!(
            resolve_amplitude(&[tau_measurement(rabi, tau)], &ctx(None)),
            Err(AmbiguityError::Unresolved { .. })
        ));
    }

    #[test]
    fn double_tau_keeps_mirror_branches_ambiguous() {
        // x and π − x give sin(2x) and −sin(2x): the signed ratios differ
        let x = 0.6f64;
        let r1 = (2.0 * x).sin() / x.sin();
        let r2 = (2.0 * (PI - x)).sin() / (PI - x).sin();
        assert!((r1 + r2).abs() < 1e-12 && (r1 - r2).abs() > 1.0);
        // but a magnitude spectrum only sees |sin|, so 2τ cannot separate them
        let tau = 31.3e-9;
        let truth = (PI - x) / tau;
        let ms = [tau_measurement(truth, tau), tau_measurement(truth, 2.0 * tau)];
        assert!(matches!(
            resolve_amplitude(&ms, &ctx(Some(1.5 * PI / tau))),
            Err(AmbiguityError::Unresolved { .. })
        ));
    }

    #[test]
    fn three_branches_split_by_a_non_harmonic_tau() {
        let tau = 31.3e-9;
        let x = 0.6;
        let strengths = [x / tau, (PI - x) / tau, (PI + x) / tau];
        for &truth in &strengths {
            let ms = [tau_measurement(truth, tau), tau_measurement(truth, 1.3 * tau)];
            let r = resolve_amplitude(&ms, &ctx(Some(1.5 * PI / tau))).unwrap();
            assert_eq!(r.candidates.len(), 3);
            assert!((r.rabi_rad_per_s - truth).abs() < 1e-6 * truth);
            assert!(r.candidates[0].score < 1e-12);
        }
    }

    #[test]
    fn resolve_all_skips_absent_pairs() {
        let tau = 1e-6;
        let sensor = Sensor::nv(1.5e9 + 20e3);
        let rabi = 0.3 / tau;
        let base = Measurement {
            beat_phase_rad: 0.5,
            ..tau_measurement(rabi, tau)
        };
        let dnu = 5e3;
        let m = Modification::LoShift { delta_nu_hz: dnu };
        let pair = MeasurementPair::new(
            base,
            Measurement {
                lo: m.apply_lo(&base.lo),
                beat_hz: 25e3,
                ..base
            },
            m,
        )
        .unwrap();
        let rctx = ResolveContext {
            sensor,
            calibration: calibration(),
            n_range: (-2, 2),
            omega_max_rad_per_s: Some(1.0 / tau),
            dephasing: false,
        };
        let r = resolve_all(&[pair], &rctx).unwrap();
        assert_eq!(r.beat_sign, 1);
        assert_eq!(r.alias_n, 0);
        assert!(r.alias.is_none());
        assert!((r.signal.frequency_hz - (1.5e9 + 20e3)).abs() < 1e-6);
        assert!((r.amplitude.rabi_rad_per_s - rabi).abs() < 1e-6 * rabi);
        assert!((r.signal.phase_rad - normalize_phase(0.5 - PI)).abs() < 1e-9);

        let other = Measurement { beat_hz: 31e3, ..base };
        let conflicting = MeasurementPair::new(
            other,
            Measurement {
                lo: m.apply_lo(&base.lo),
                beat_hz: 36e3,
                ..other
            },
            m,
        )
        .unwrap();
        let tau_pair = MeasurementPair::new(
            base,
            Measurement { tau_s: 1.3 * tau, ..base },
            Modification::TauChange { tau_s: 1.3 * tau },
        )
        .unwrap();
        assert!(matches!(
            resolve_all(&[tau_pair, conflicting], &rctx),
            Err(AmbiguityError::Inconclusive(_))
        ));
    }
}
