//! Two-level sensor driven by a near-resonant classical field.
//!
//! Matrices act on column vectors in the basis `(|1⟩, |0⟩)`, i.e. `|0⟩ = (0, 1)ᵀ`,
//! which is the ordering in which the propagators below take their textbook form.
//! All angular quantities (`Ω₀`, `Δ`, `Ω_sig`) are in rad/s; frequencies stored on
//! [`SignalField`] and [`Sensor`] are in Hz.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gyromagnetic ratio of the NV electron spin, 2π × 28.03 MHz/mT, in rad s⁻¹ T⁻¹.
pub const GAMMA_NV: f64 = TAU * 28.03e9;

/// Below this oscillation amplitude the population is treated as phase independent.
const DEGENERATE_AMPLITUDE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// The final population does not depend on the signal phase.
    #[error("degenerate drive: population is independent of the signal phase")]
    DegenerateDrive,
    #[error("beat phase shift undefined: sin(Ω_sig τ) = 0")]
    UndefinedPhaseShift,
}

pub type Operator = Matrix2<Complex64>;
pub type StateVector = Vector2<Complex64>;

/// Wraps an angle into `[-π, π)`.
pub fn normalize_phase(phase: f64) -> f64 {
    if (-PI..PI).contains(&phase) {
        return phase;
    }
    let wrapped = (phase + PI).rem_euclid(TAU) - PI;
    // rem_euclid may round up to exactly TAU for tiny negative inputs
    if wrapped >= PI {
        -PI
    } else {
        wrapped
    }
}

/// The unknown target field `B(t) = B₀ cos(2π ν t + φ₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalField {
    /// B₀ in tesla.
    pub amplitude_t: f64,
    pub frequency_hz: f64,
    /// φ₀ in `[-π, π)`.
    pub phase_rad: f64,
}

impl SignalField {
    pub fn new(amplitude_t: f64, frequency_hz: f64, phase_rad: f64) -> Result<Self, PhysicsError> {
        let field = Self {
            amplitude_t,
            frequency_hz,
            phase_rad: normalize_phase(phase_rad),
        };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.amplitude_t >= 0.0 && self.amplitude_t.is_finite()) {
            return Err(PhysicsError::InvalidParameter(format!(
                "signal amplitude must be finite and >= 0, got {}",
                self.amplitude_t
            )));
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(PhysicsError::InvalidParameter(format!(
                "signal frequency must be > 0, got {}",
                self.frequency_hz
            )));
        }
        if !(-PI..PI).contains(&self.phase_rad) {
            return Err(PhysicsError::InvalidParameter(format!(
                "signal phase must lie in [-pi, pi), got {}",
                self.phase_rad
            )));
        }
        Ok(())
    }
}

/// Two-level sensor with a two-state photon-rate readout model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensor {
    pub resonance_hz: f64,
    pub gamma_rad_per_s_per_t: f64,
    pub t2_star_s: f64,
    /// Mean accepted photons per readout with the sensor in |0⟩.
    pub bright_rate: f64,
    /// Mean accepted photons per readout with the sensor in |1⟩.
    pub dark_rate: f64,
}

impl Sensor {
    pub const DEFAULT_BRIGHT_RATE: f64 = 0.25;
    pub const DEFAULT_DARK_RATE: f64 = 0.15;

    /// NV centre at the given resonance with T₂* = 50 µs and the default photon rates.
    pub fn nv(resonance_hz: f64) -> Self {
        Self {
            resonance_hz,
            gamma_rad_per_s_per_t: GAMMA_NV,
            t2_star_s: 50e-6,
            bright_rate: Self::DEFAULT_BRIGHT_RATE,
            dark_rate: Self::DEFAULT_DARK_RATE,
        }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let positive = [
            ("resonance_hz", self.resonance_hz),
            ("gamma_rad_per_s_per_t", self.gamma_rad_per_s_per_t),
            ("t2_star_s", self.t2_star_s),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(PhysicsError::InvalidParameter(format!(
                    "{name} must be > 0, got {value}"
                )));
            }
        }
        if !(0.0 <= self.dark_rate && self.dark_rate <= self.bright_rate && self.bright_rate.is_finite())
        {
            return Err(PhysicsError::InvalidParameter(format!(
                "photon rates must satisfy 0 <= dark ({}) <= bright ({})",
                self.dark_rate, self.bright_rate
            )));
        }
        Ok(())
    }

    /// Δ = 2π(ν_sig − ν_sens).
    pub fn detuning(&self, signal_hz: f64) -> f64 {
        TAU * (signal_hz - self.resonance_hz)
    }

    pub fn rabi(&self, field_t: f64) -> f64 {
        rabi_from_field(field_t, self.gamma_rad_per_s_per_t)
    }

    /// Mean photons for a given |1⟩ population.
    pub fn photon_mean(&self, population_one: f64) -> f64 {
        (1.0 - population_one) * self.bright_rate + population_one * self.dark_rate
    }
}

/// Drive parameters for one interaction window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    /// Ω₀ = γ B₀.
    pub rabi_rad_per_s: f64,
    /// Δ = 2π(ν_sig − ν_sens).
    pub detuning_rad_per_s: f64,
    /// Ω_sig = √(Δ² + Ω₀²).
    pub generalized_rabi_rad_per_s: f64,
    pub tau_s: f64,
}

impl InteractionParams {
    pub fn new(rabi: f64, detuning: f64, tau_s: f64) -> Result<Self, PhysicsError> {
        if !(tau_s >= 0.0 && tau_s.is_finite()) {
            return Err(PhysicsError::InvalidParameter(format!(
                "interaction time must be >= 0, got {tau_s}"
            )));
        }
        if !(rabi.is_finite() && detuning.is_finite()) {
            return Err(PhysicsError::InvalidParameter(
                "rabi and detuning must be finite".into(),
            ));
        }
        Ok(Self {
            rabi_rad_per_s: rabi,
            detuning_rad_per_s: detuning,
            generalized_rabi_rad_per_s: rabi.hypot(detuning),
            tau_s,
        })
    }

    pub fn from_signal(signal: &SignalField, sensor: &Sensor, tau_s: f64) -> Result<Self, PhysicsError> {
        Self::new(
            sensor.rabi(signal.amplitude_t),
            sensor.detuning(signal.frequency_hz),
            tau_s,
        )
    }

    pub fn with_tau(&self, tau_s: f64) -> Result<Self, PhysicsError> {
        Self::new(self.rabi_rad_per_s, self.detuning_rad_per_s, tau_s)
    }

    /// Ω_sig τ.
    pub fn rotation_angle(&self) -> f64 {
        self.generalized_rabi_rad_per_s * self.tau_s
    }

    /// Coefficients `(A, B)` of `|c₁|² = ½[1 + A cos φ + B sin φ]`.
    pub fn oscillation_coefficients(&self) -> (f64, f64) {
        let omega = self.generalized_rabi_rad_per_s;
        if omega == 0.0 {
            return (0.0, 0.0);
        }
        let angle = self.rotation_angle();
        let a = self.rabi_rad_per_s / omega * angle.sin();
        let b = -self.detuning_rad_per_s * self.rabi_rad_per_s / (omega * omega) * (1.0 - angle.cos());
        (a, b)
    }

    /// The complex beat amplitude `A − iB`: `|c₁|² = ½[1 + Re((A − iB) e^{iφ})]`.
    ///
    /// Its modulus is the contrast and its argument is the offset between the beat
    /// phase and the signal phase.
    pub fn beat_phasor(&self) -> Complex64 {
        let (a, b) = self.oscillation_coefficients();
        Complex64::new(a, -b)
    }
}

/// Propagator of the rotating-frame drive over `τ` with signal phase `φ`.
pub fn signal_unitary(p: &InteractionParams, phase_rad: f64) -> Operator {
    let omega = p.generalized_rabi_rad_per_s;
    if omega == 0.0 {
        return Operator::identity();
    }
    let half = 0.5 * omega * p.tau_s;
    let (s, c) = half.sin_cos();
    let nz = p.detuning_rad_per_s / omega;
    let nx = p.rabi_rad_per_s / omega;
    let i_s = Complex64::new(0.0, s);
    let e = Complex64::from_polar(1.0, phase_rad);
    Operator::new(
        Complex64::from(c) + i_s * (-nz),
        i_s * e * nx,
        i_s * e.conj() * nx,
        Complex64::from(c) + i_s * nz,
    )
}

/// The zero-phase π/2 preparation pulse, `(1/√2)[[1, i], [i, 1]]`.
pub fn pi_half_pulse() -> Operator {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Operator::new(
        Complex64::new(h, 0.0),
        Complex64::new(0.0, h),
        Complex64::new(0.0, h),
        Complex64::new(h, 0.0),
    )
}

pub fn ground_state() -> StateVector {
    StateVector::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0))
}

/// Population of |1⟩ for a normalized state in the `(|1⟩, |0⟩)` basis.
pub fn population_one(state: &StateVector) -> f64 {
    state[0].norm_sqr()
}

/// `|c₁|²` after π/2 preparation and interaction with signal phase `φ`.
pub fn population_exact(p: &InteractionParams, phase_rad: f64) -> f64 {
    let (a, b) = p.oscillation_coefficients();
    (0.5 * (1.0 + a * phase_rad.cos() + b * phase_rad.sin())).clamp(0.0, 1.0)
}

/// Small-detuning form `½[1 + sin(Ω₀τ) cos φ]`.
pub fn population_approx(rabi: f64, tau_s: f64, phase_rad: f64) -> f64 {
    0.5 * (1.0 + (rabi * tau_s).sin() * phase_rad.cos())
}

/// Phases `(φ_max, φ_min)` maximizing and minimizing `|c₁|²`.
///
/// Both are `φ_k = −arctan[(Δ/Ω_sig) tan(Ω_sig τ/2)] + kπ` for `k ∈ {0, 1}`.
pub fn extremal_phases(p: &InteractionParams) -> Result<(f64, f64), PhysicsError> {
    let (a, b) = p.oscillation_coefficients();
    if a.hypot(b) < DEGENERATE_AMPLITUDE {
        return Err(PhysicsError::DegenerateDrive);
    }
    let ratio = p.detuning_rad_per_s / p.generalized_rabi_rad_per_s;
    let phi0 = -(ratio * (0.5 * p.rotation_angle()).tan()).atan();
    let phi1 = phi0 + PI;
    if population_exact(p, phi0) >= population_exact(p, phi1) {
        Ok((phi0, phi1))
    } else {
        Ok((phi1, phi0))
    }
}

/// Peak-to-peak swing of `|c₁|²` over the signal phase; 0 for a degenerate drive.
pub fn contrast(p: &InteractionParams) -> f64 {
    match extremal_phases(p) {
        Ok((hi, lo)) => population_exact(p, hi) - population_exact(p, lo),
        Err(_) => 0.0,
    }
}

/// Highest contrast reachable by choosing τ.
pub fn max_contrast(detuning: f64, rabi: f64) -> f64 {
    if detuning.abs() <= rabi {
        1.0
    } else {
        2.0 * detuning.abs() * rabi / (detuning * detuning + rabi * rabi)
    }
}

/// Interaction time reaching [`max_contrast`].
pub fn optimal_tau(detuning: f64, rabi: f64) -> f64 {
    let omega = rabi.hypot(detuning);
    if detuning.abs() <= rabi {
        let arg = (omega / (std::f64::consts::SQRT_2 * rabi)).min(1.0);
        2.0 / omega * arg.asin()
    } else {
        PI / omega
    }
}

/// θ = arctan[(Δ/Ω_sig) tan(Ω_sig τ/2)], the offset of the beat phase from φ₀.
pub fn beat_phase_shift(p: &InteractionParams) -> Result<f64, PhysicsError> {
    let angle = p.rotation_angle();
    if angle.sin().abs() < DEGENERATE_AMPLITUDE || p.generalized_rabi_rad_per_s == 0.0 {
        return Err(PhysicsError::UndefinedPhaseShift);
    }
    let ratio = p.detuning_rad_per_s / p.generalized_rabi_rad_per_s;
    Ok((ratio * (0.5 * angle).tan()).atan())
}

/// Multiplicative damping of the population oscillation, `exp(−τ/T₂*)`.
pub fn dephasing_factor(tau_s: f64, t2_star_s: f64) -> f64 {
    (-tau_s / t2_star_s).exp()
}

pub fn field_from_rabi(rabi: f64, gamma: f64) -> f64 {
    rabi / gamma
}

pub fn rabi_from_field(field_t: f64, gamma: f64) -> f64 {
    gamma * field_t
}

/// Field performing a π/2 rotation within T₂*/2, `π/(γ T₂*)`.
pub fn max_unambiguous_field(gamma: f64, t2_star_s: f64) -> f64 {
    PI / (gamma * t2_star_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn params(rabi: f64, detuning: f64, tau: f64) -> InteractionParams {
        InteractionParams::new(rabi, detuning, tau).unwrap()
    }

    /// Params with a prescribed rotation angle Ω_sig τ.
    fn params_for_angle(rabi: f64, detuning: f64, angle: f64) -> InteractionParams {
        let omega = rabi.hypot(detuning);
        params(rabi, detuning, angle / omega)
    }

    fn unitarity_error(u: &Operator) -> f64 {
        (u.adjoint() * u - Operator::identity()).norm()
    }

    #[test]
    fn zero_drive_is_identity() {
        let u = signal_unitary(&params(0.0, 0.0, 3.0e-6), 0.7);
        assert_eq!(u, Operator::identity());
    }

    #[test]
    fn resonant_pi_pulse_flips_ground_state() {
        let rabi = 1.0e6;
        let u = signal_unitary(&params(rabi, 0.0, PI / rabi), 0.0);
        let out = u * ground_state();
        assert!((out[0] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
        assert!(out[1].norm() < 1e-12);
    }

    #[test]
    fn pi_half_properties() {
        let u = pi_half_pulse();
        assert!(unitarity_error(&u) < 1e-12);
        let once = u * ground_state();
        assert!((population_one(&once) - 0.5).abs() < 1e-15);
        // |+_i⟩ = (|0⟩ + i|1⟩)/√2
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((once[0] - Complex64::new(0.0, h)).norm() < 1e-15);
        assert!((once[1] - Complex64::new(h, 0.0)).norm() < 1e-15);
        let twice = u * once;
        assert!((population_one(&twice) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn population_examples() {
        let rabi = 2.0e6;
        let p = params(rabi, 0.0, FRAC_PI_2 / rabi);
        assert!((population_exact(&p, 0.0) - 1.0).abs() < 1e-12);
        assert!(population_exact(&p, PI).abs() < 1e-12);

        let p = params_for_angle(rabi, rabi, PI);
        assert!(population_exact(&p, FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn population_matches_matrix_product() {
        let rabi = 1.3e6;
        let p = params_for_angle(rabi, 0.3 * rabi, FRAC_PI_2);
        let phase = 1.0;
        let state = signal_unitary(&p, phase) * pi_half_pulse() * ground_state();
        assert!((population_exact(&p, phase) - population_one(&state)).abs() < 1e-12);
    }

    #[test]
    fn approx_examples() {
        let rabi = 5.0e5;
        assert!((population_approx(rabi, PI / rabi, 0.3) - 0.5).abs() < 1e-12);
        assert!((population_approx(rabi, FRAC_PI_2 / rabi, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn approx_agrees_for_small_detuning() {
        let rabi = 1.0e6;
        let tau = 0.9 / rabi;
        let p = params(rabi, 1e-3 * rabi, tau);
        let worst = (0..1000)
            .map(|i| -PI + TAU * i as f64 / 1000.0)
            .map(|phi| (population_exact(&p, phi) - population_approx(rabi, tau, phi)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "worst deviation {worst}");
    }

    #[test]
    fn extremal_phases_resonant() {
        let rabi = 1.0e6;
        let (hi, lo) = extremal_phases(&params(rabi, 0.0, 1.0 / rabi)).unwrap();
        assert!(hi.abs() < 1e-15);
        assert!((lo - PI).abs() < 1e-15);
    }

    #[test]
    fn extremal_phases_detuned_pi_pulse() {
        let rabi = 1.0e6;
        let p = params_for_angle(rabi, 2.0 * rabi, PI);
        let (hi, lo) = extremal_phases(&p).unwrap();
        assert!((hi.abs() - FRAC_PI_2).abs() < 1e-9);
        assert!((lo.abs() - FRAC_PI_2).abs() < 1e-9);
        assert!((hi - lo).abs() > 3.0);
    }

    #[test]
    fn extremal_phases_zero_derivative() {
        let rabi = 1.0e6;
        let p = params_for_angle(rabi, rabi, FRAC_PI_2);
        let (hi, lo) = extremal_phases(&p).unwrap();
        let expected = -(std::f64::consts::FRAC_1_SQRT_2).atan();
        assert!((hi - expected).abs() < 1e-12 || (lo - expected).abs() < 1e-12);
        assert!((expected + 0.6155).abs() < 1e-4);
        let h = 1e-6;
        for phi in [hi, lo] {
            let d = (population_exact(&p, phi + h) - population_exact(&p, phi - h)) / (2.0 * h);
            assert!(d.abs() < 1e-8, "derivative {d} at {phi}");
        }
    }

    #[test]
    fn degenerate_drive() {
        let rabi = 1.0e6;
        let p = params_for_angle(rabi, 0.5 * rabi, TAU);
        assert_eq!(extremal_phases(&p), Err(PhysicsError::DegenerateDrive));
        assert_eq!(contrast(&p), 0.0);
    }

    #[test]
    fn contrast_examples() {
        let rabi = 1.0e6;
        assert!((contrast(&params(rabi, 0.0, FRAC_PI_2 / rabi)) - 1.0).abs() < 1e-12);
        assert!(contrast(&params(rabi, 0.0, PI / rabi)).abs() < 1e-12);
    }

    #[test]
    fn contrast_matches_grid_search() {
        let rabi = 1.0e6;
        let p = params_for_angle(rabi, 2.0 * rabi, FRAC_PI_2);
        let (mut hi, mut lo) = (f64::MIN, f64::MAX);
        for i in 0..100_000 {
            let v = population_exact(&p, -PI + TAU * i as f64 / 100_000.0);
            hi = hi.max(v);
            lo = lo.min(v);
        }
        assert!((contrast(&p) - (hi - lo)).abs() < 1e-6);
    }

    #[test]
    fn resonant_contrast_is_abs_sin() {
        let rabi = 7.0e5;
        for i in 1..200 {
            let tau = i as f64 * 3.0e-8;
            let c = contrast(&params(rabi, 0.0, tau));
            assert!((c - (rabi * tau).sin().abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn max_contrast_branches() {
        let rabi = 1.0e6;
        assert_eq!(max_contrast(0.0, rabi), 1.0);
        assert!((max_contrast(rabi, rabi) - 1.0).abs() < 1e-15);
        assert!((max_contrast(rabi * (1.0 + 1e-12), rabi) - 1.0).abs() < 1e-12);
        assert!((max_contrast(3.0 * rabi, rabi) - 0.6).abs() < 1e-15);
        assert!((max_contrast(-3.0 * rabi, rabi) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn optimal_tau_examples() {
        let rabi = 2.0 * PI * 178e3;
        assert!((optimal_tau(0.0, rabi) - FRAC_PI_2 / rabi).abs() < 1e-18);
        let t = optimal_tau(rabi, rabi);
        assert!((t - PI / (std::f64::consts::SQRT_2 * rabi)).abs() < 1e-15);
        // half of the population transferred by the Rabi oscillation alone
        let omega = rabi * std::f64::consts::SQRT_2;
        let transfer = (rabi / omega).powi(2) * (0.5 * omega * t).sin().powi(2);
        assert!((transfer - 0.5).abs() < 1e-12);
        let t3 = optimal_tau(3.0 * rabi, rabi);
        assert!((t3 - PI / (10f64.sqrt() * rabi)).abs() < 1e-15);
        for det in [0.0, 0.5, 1.0, 3.0, -2.0] {
            let d = det * rabi;
            let c = contrast(&params(rabi, d, optimal_tau(d, rabi)));
            assert!((c - max_contrast(d, rabi)).abs() < 1e-9, "det {det}: {c}");
        }
    }

    #[test]
    fn phase_shift_examples() {
        let rabi = 1.0e6;
        assert_eq!(beat_phase_shift(&params(rabi, 0.0, 1.0 / rabi)).unwrap(), 0.0);
        let p = params_for_angle(rabi, rabi, FRAC_PI_2);
        let theta = beat_phase_shift(&p).unwrap();
        assert!((theta - std::f64::consts::FRAC_1_SQRT_2.atan()).abs() < 1e-12);
        assert!((theta - 0.6155).abs() < 1e-4);
        assert_eq!(
            beat_phase_shift(&params_for_angle(rabi, rabi, PI)),
            Err(PhysicsError::UndefinedPhaseShift)
        );
    }

    #[test]
    fn phasor_argument_is_theta_for_positive_a() {
        let rabi = 1.0e6;
        let p = params_for_angle(rabi, 0.7 * rabi, 1.1);
        let theta = beat_phase_shift(&p).unwrap();
        assert!((p.beat_phasor().arg() - theta).abs() < 1e-12);
        assert!((p.beat_phasor().norm() - contrast(&p)).abs() < 1e-12);
    }

    #[test]
    fn field_conversions() {
        let b = field_from_rabi(TAU * 178e3, GAMMA_NV);
        assert!((b - 6.35e-6).abs() / 6.35e-6 < 0.01);
        assert!((b - 6.37e-6).abs() / 6.37e-6 < 0.01);
        assert_eq!(field_from_rabi(0.0, GAMMA_NV), 0.0);
        assert!((rabi_from_field(b, GAMMA_NV) - TAU * 178e3).abs() < 1e-6);
        let b_max = max_unambiguous_field(GAMMA_NV, 50e-6);
        assert!((b_max - 0.357e-6).abs() < 1e-9);
        assert!((b_max - 0.36e-6).abs() / 0.36e-6 < 0.01);
    }

    #[test]
    fn phase_normalization() {
        assert_eq!(normalize_phase(PI), -PI);
        assert!((normalize_phase(3.0 * PI + 0.2) - (-PI + 0.2)).abs() < 1e-12);
        assert_eq!(normalize_phase(-1e-18), -1e-18);
        assert!(SignalField::new(1e-6, 1.5e9, 7.0).unwrap().phase_rad < PI);
        assert!(SignalField::new(-1.0, 1.5e9, 0.0).is_err());
        assert!(SignalField::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn sensor_validation() {
        let mut s = Sensor::nv(1.51e9);
        assert!(s.validate().is_ok());
        s.dark_rate = 0.3;
        assert!(s.validate().is_err());
        s = Sensor::nv(1.51e9);
        s.t2_star_s = 0.0;
        assert!(s.validate().is_err());
    }
}
