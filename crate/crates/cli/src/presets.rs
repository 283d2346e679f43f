//! Named scenarios, sized for a desk machine.

use std::f64::consts::PI;

use qdyne_core::ambiguity::Modification;
use qdyne_core::physics::{SignalField, GAMMA_NV};
use qdyne_core::trace::SignalMode;

use crate::config::{
    Config, LadderSpec, LoSpec, ResolutionSpec, SweepParameter, SweepSpec, DEFAULT_N_LO,
    DEFAULT_SEQUENCE_LENGTH_S,
};

pub const NAMES: &[&str] = &[
    "fig1c",
    "fig1d-toggled",
    "fig1d-continuous",
    "fig1d-dc-shift",
    "fig2-scaling",
    "fig2-noiseless",
    "fig3a",
    "fig3b",
    "fig3c",
    "sign",
    "alias",
    "full-resolution",
    "contrast-tau",
    "contrast-detuning",
    "multi-tone",
];

const LO_HZ: f64 = DEFAULT_N_LO as f64 / DEFAULT_SEQUENCE_LENGTH_S;

fn tone(amplitude_t: f64, frequency_hz: f64, phase_rad: f64) -> SignalField {
    SignalField {
        amplitude_t,
        frequency_hz,
        phase_rad,
    }
}

/// 1.5 GHz LO at `t_l`, with the signal `beat` above it and the sensor on the signal.
fn resonant(name: &str, t_l: f64, beat: f64, angle: f64, tau: f64, phase: f64) -> Config {
    let n_lo = (1.5e9 * t_l).round() as i64;
    let nu = n_lo as f64 / t_l + beat;
    let mut c = Config {
        name: name.into(),
        signals: vec![tone(angle / (GAMMA_NV * tau), nu, phase)],
        lo: LoSpec {
            sequence_length_s: t_l,
            n_lo: Some(n_lo),
            frequency_hz: None,
            shift_hz: 0.0,
        },
        ..Config::default()
    };
    c.sensor.resonance_hz = Some(nu);
    c.sequence.tau_s = tau;
    c
}

pub fn preset(name: &str) -> Option<Config> {
    let fig1c = Config {
        name: name.into(),
        n_sequences: Some(3_000_000),
        ..Config::default()
    };
    let one_second = Config {
        n_sequences: Some(300_000),
        ..fig1c.clone()
    };
    Some(match name {
        "fig1c" => fig1c,
        "fig1d-toggled" => one_second,
        "fig1d-continuous" => {
            let mut c = one_second;
            c.sequence.signal_mode = SignalMode::Continuous;
            c
        }
        "fig1d-dc-shift" => {
            let mut c = one_second;
            c.sequence.signal_mode = SignalMode::ContinuousWithDcShift;
            c.sequence.dc_shift_hz = -3e6;
            c
        }
        // bin-centred 250 kHz beat at every rung, fit span fixed in Hz, floor taken
        // from the top quarter of the band
        "fig2-scaling" | "fig2-noiseless" => {
            let mut c = resonant(name, 1e-6, 250e3, 1.0, 0.5e-6, 0.4);
            c.sensor.bright_rate = 0.3;
            c.sensor.dark_rate = 0.1;
            c.seeds = (1..=20).collect();
            c.noiseless = name == "fig2-noiseless";
            c.analysis.window_hz = Some(50e3);
            c.analysis.noise_band = Some((0.75, 1.0));
            c.ladder = Some(LadderSpec {
                total_times_s: vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            });
            c
        }
        "fig3a" => {
            let mut c = one_second;
            c.signals = vec![tone(223e-9, LO_HZ + 20e3, 0.0)];
            c.seeds = (1..=5).collect();
            c.sweep = Some(SweepSpec {
                parameter: SweepParameter::TotalTimeS,
                values: Some(vec![0.1, 0.3, 1.0, 3.0]),
                start: 0.0,
                stop: 0.0,
                points: 0,
            });
            c
        }
        "fig3b" => {
            let tau = 31.3e-9;
            let mut c = resonant(name, 2e-6, 20e3, PI - 0.7, tau, 0.0);
            c.n_sequences = Some(20_000);
            c.noiseless = true;
            c.resolution = Some(ResolutionSpec {
                modifications: vec![Modification::TauChange { tau_s: 1.3 * tau }],
                n_range: (0, 0),
                omega_max_rad_per_s: Some(1.5 * PI / tau),
            });
            c
        }
        "fig3c" => {
            let mut c = one_second;
            c.seeds = vec![1];
            c.sweep = Some(SweepSpec {
                parameter: SweepParameter::SignalFrequencyHz,
                values: None,
                start: LO_HZ + 20e3 - 400e3,
                stop: LO_HZ + 20e3 + 400e3,
                points: 9,
            });
            c
        }
        "sign" => {
            let mut c = resonant(name, 2e-6, -20e3, 0.5, 1e-6, 0.4);
            c.n_sequences = Some(50_000);
            c.noiseless = true;
            c.resolution = Some(ResolutionSpec {
                modifications: vec![Modification::LoShift { delta_nu_hz: 5e3 }],
                n_range: (0, 0),
                // rotation known to stay below π/2, which picks the amplitude branch
                omega_max_rad_per_s: Some(PI / 2e-6),
            });
            c
        }
        "alias" => {
            let mut c = resonant(name, 2e-6, 20e3 - 5e5, 0.5, 1e-6, 0.4);
            c.n_sequences = Some(50_000);
            c.noiseless = true;
            c.resolution = Some(ResolutionSpec {
                modifications: vec![Modification::SequenceStretch { delta_t_l_s: 20e-9 }],
                n_range: (-1, 1),
                omega_max_rad_per_s: Some(PI / 2e-6),
            });
            c
        }
        "full-resolution" => {
            let t_l = 2e-6;
            let mut c = resonant(name, t_l, -(20e3 + 1.0 / t_l), PI - 0.6, 1e-6, 1.1);
            c.n_sequences = Some(50_000);
            c.noiseless = true;
            c.resolution = Some(ResolutionSpec {
                modifications: vec![
                    Modification::LoShift { delta_nu_hz: 5e3 },
                    Modification::SequenceStretch { delta_t_l_s: 20e-9 },
                    Modification::TauChange { tau_s: 1.3e-6 },
                ],
                n_range: (-2, 2),
                omega_max_rad_per_s: None,
            });
            c
        }
        // Ω₀ = 2π·1 MHz; τ over two Rabi periods
        "contrast-tau" => {
            let mut c = Config {
                name: name.into(),
                n_sequences: Some(30_000),
                noiseless: true,
                ..Config::default()
            };
            c.signals = vec![tone(2.0 * PI * 1e6 / GAMMA_NV, LO_HZ + 20e3, 0.0)];
            c.sensor.resonance_hz = Some(LO_HZ + 20e3);
            c.sweep = Some(SweepSpec {
                parameter: SweepParameter::TauS,
                values: None,
                start: 0.0,
                stop: 2e-6,
                points: 81,
            });
            c
        }
        // τ = π/(2Ω₀), Δ over ±5 Ω₀
        "contrast-detuning" => {
            let rabi = 2.0 * PI * 1e6;
            let mut c = Config {
                name: name.into(),
                n_sequences: Some(30_000),
                noiseless: true,
                ..Config::default()
            };
            c.signals = vec![tone(rabi / GAMMA_NV, LO_HZ + 20e3, 0.0)];
            c.sequence.tau_s = PI / (2.0 * rabi);
            c.sweep = Some(SweepSpec {
                parameter: SweepParameter::DetuningHz,
                values: None,
                start: -5e6,
                stop: 5e6,
                points: 101,
            });
            c
        }
        // two tones 160 Hz apart plus a third well clear of them
        "multi-tone" => {
            let tau = 1e-6;
            let field = 0.3 / (GAMMA_NV * tau);
            let mut c = Config {
                name: name.into(),
                noiseless: true,
                ..Config::default()
            };
            c.signals = [2037.0, 3440.0, 3600.0]
                .iter()
                .map(|d| tone(field, LO_HZ + d, 0.3))
                .collect();
            c.sequence.tau_s = tau;
            c.analysis.peak_threshold_sigma = Some(8.0);
            c.sweep = Some(SweepSpec {
                parameter: SweepParameter::TotalTimeS,
                values: Some(vec![3e-3, 6.25e-3, 12.5e-3, 25e-3, 50e-3]),
                start: 0.0,
                stop: 0.0,
                points: 0,
            });
            c
        }
        _ => return None,
    })
}
