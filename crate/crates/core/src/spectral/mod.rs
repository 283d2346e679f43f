//! Spectral reconstruction of count traces.
//!
//! The forward DFT is unnormalised, `X_m = Σ_k x_k e^{−2πi mk/n}`, and only the
//! `⌊n/2⌋ + 1` non-negative frequency bins are kept. A real cosine of amplitude `A`
//! centred on a bin therefore shows up with magnitude `n·A/2`.

mod estimate;
mod fit;

pub use estimate::{
    calibrate_amplitude, estimate_amplitude, estimate_frequency, estimate_phase, find_peaks,
    noise_floor, reconstruct, AmplitudeCalibration, AmplitudeEstimate, FrequencyEstimate,
    NoiseFloor, PeakCandidate, PhaseEstimate, ReconstructOptions, ReconstructionResult,
};
pub use fit::{fit_lorentzian, fit_peak, FitOptions, LorentzianFit, ParamCi, RawFit};

use std::io::{self, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::physics::PhysicsError;
use crate::trace::PhotonTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("need at least two samples, got {0}")]
    EmptyTrace(usize),
    #[error("fit window has {0} bins, at least 5 are required")]
    WindowTooSmall(usize),
    #[error("fit did not converge after {iterations} iterations: {reason}")]
    NotConverged { iterations: usize, reason: String },
    #[error("peak at bin {0} has no neighbour on both sides")]
    PeakOnBoundary(usize),
    #[error("measured contrast {measured} lies outside the calibrated branch [{low}, {high}]")]
    OutOfDynamicRange { measured: f64, low: f64, high: f64 },
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// One-sided DFT of a real record.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    /// `1/T` with `T = n·T_L`.
    pub bin_width_hz: f64,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
}

impl Spectrum {
    /// Transform of the mean-subtracted samples; no window is applied.
    pub fn from_samples(samples: &[f64], sequence_length_s: f64) -> Result<Self, SpectralError> {
        let n = samples.len();
        if n < 2 {
            return Err(SpectralError::EmptyTrace(n));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x - mean, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        buf.truncate(n / 2 + 1);
        Ok(Self {
            bins: buf,
            bin_width_hz: 1.0 / (n as f64 * sequence_length_s),
            sample_rate_hz: 1.0 / sequence_length_s,
            n_samples: n,
        })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.norm()).collect()
    }

    pub fn bin_frequency(&self, bin: f64) -> f64 {
        bin * self.bin_width_hz
    }

    pub fn total_time_s(&self) -> f64 {
        1.0 / self.bin_width_hz
    }

    /// `Σ|X|²` over the full two-sided transform, rebuilt from the kept half.
    pub fn two_sided_power(&self) -> f64 {
        let n = self.n_samples;
        self.bins
            .iter()
            .enumerate()
            .map(|(m, b)| {
                let mirrored = m != 0 && !(n.is_multiple_of(2) && m == n / 2);
                b.norm_sqr() * if mirrored { 2.0 } else { 1.0 }
            })
            .sum()
    }

    /// Rows of `bin_hz,re,im,magnitude`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_hz,re,im,magnitude")?;
        for (m, b) in self.bins.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                self.bin_frequency(m as f64),
                b.re,
                b.im,
                b.norm()
            )?;
        }
        Ok(())
    }
}

pub fn fft_trace(trace: &PhotonTrace) -> Result<Spectrum, SpectralError> {
    let samples: Vec<f64> = trace.counts.iter().map(|&c| f64::from(c)).collect();
    Spectrum::from_samples(&samples, trace.lo.sequence_length_s)
}
