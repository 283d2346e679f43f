//! The five subcommands as library functions. Each returns a serializable result;
//! file output and exit codes are handled by the caller.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use qdyne_core::ambiguity::{
    resolve_all, Measurement, MeasurementPair, Modification, ResolveContext, ResolvedSignal,
};
use qdyne_core::physics::{contrast, dephasing_factor, InteractionParams, SignalField};
use qdyne_core::spectral::{
    estimate_amplitude, estimate_phase, find_peaks, fit_peak, noise_floor, reconstruct,
    AmplitudeCalibration, PeakCandidate, ReconstructOptions, ReconstructionResult, Spectrum,
};
use qdyne_core::trace::{read_trace, write_trace, PhotonTrace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, SweepParameter};
use crate::error::CliError;
use crate::scenario::Scenario;

pub const MIN_RUNGS: usize = 5;

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn seeds_or_noiseless(config: &Config) -> Vec<Option<u64>> {
    if config.noiseless {
        vec![None]
    } else {
        config.seeds.iter().map(|&s| Some(s)).collect()
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceArtifact {
    pub path: String,
    pub seed: u64,
    pub n_sequences: usize,
    pub bytes: u64,
    pub mean_count: f64,
    pub saturated: bool,
}

/// One trace file per seed, seed-suffixed when there is more than one.
pub fn simulate(config: &Config, out: &Path) -> Result<Vec<TraceArtifact>, CliError> {
    let scn = Scenario::from_config(config)?;
    std::fs::create_dir_all(out)?;
    let many = config.seeds.len() > 1;
    if config.seeds.is_empty() {
        return Err(CliError::Config("seeds: simulate needs at least one seed".into()));
    }
    config
        .seeds
        .iter()
        .map(|&seed| {
            let trace = scn.trace(seed)?;
            let file = if many {
                format!("{}_seed{seed}.qdtr", config.name)
            } else {
                format!("{}.qdtr", config.name)
            };
            let path = out.join(file);
            write_trace(&trace, &path)?;
            Ok(TraceArtifact {
                path: display(&path),
                seed,
                n_sequences: trace.n_sequences(),
                bytes: std::fs::metadata(&path)?.len(),
                mean_count: trace.mean_count(),
                saturated: trace.saturated,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAnalysis {
    pub path: String,
    pub seed: u64,
    pub n_sequences: usize,
    pub total_time_s: f64,
    pub window_bins: usize,
    pub reconstruction: ReconstructionResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<AmplitudeCalibration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peaks: Option<Vec<PeakCandidate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<SignalField>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum_csv: Option<String>,
}

/// The analysis settings of `config` applied to the sequence stored in `trace`.
fn scenario_for_trace(trace: &PhotonTrace, config: &Config) -> Result<Scenario, CliError> {
    let base = Scenario::from_config(&Config {
        n_sequences: None,
        total_time_s: None,
        ..config.clone()
    })?;
    Ok(Scenario {
        signals: trace.truth.clone().unwrap_or_default(),
        sensor: trace.sensor,
        sequence: trace.config,
        lo: trace.lo,
        n: trace.n_sequences(),
        ..base
    })
}

fn analyze_spectrum(
    spec: &Spectrum,
    scn: &Scenario,
    config: &Config,
) -> Result<(ReconstructionResult, Option<AmplitudeCalibration>), CliError> {
    let fit_opts = scn.fit_options();
    let first = fit_peak(spec, &fit_opts)?;
    let sign = config.analysis.beat_sign.unwrap_or(1);
    let beat = if sign < 0 { -first.center_hz } else { first.center_hz };
    let calibration = if scn.sequence.tau_s > 0.0 {
        Some(scn.calibrate(scn.reference_frequency(beat))?)
    } else {
        None
    };
    let opts = ReconstructOptions {
        fit: fit_opts,
        beat_sign: config.analysis.beat_sign,
        correct_theta: config.analysis.correct_theta,
        calibration,
    };
    let mut result = reconstruct(spec, &scn.lo, &scn.sensor, scn.sequence.tau_s, &opts)?;
    if let Some(window) = scn.noise_window(spec) {
        let amp = calibration
            .map(|cal| {
                estimate_amplitude(
                    &result.fit,
                    spec.n_samples,
                    &cal,
                    scn.sequence.tau_s,
                    scn.sensor.detuning(result.frequency_hz),
                )
            })
            .transpose()?;
        result.noise_floor = noise_floor(spec, &result.fit, Some(window), amp.as_ref());
    }
    Ok((result, calibration))
}

pub fn analyze(
    paths: &[PathBuf],
    config: &Config,
    out: Option<&Path>,
) -> Result<Vec<TraceAnalysis>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("analyze needs at least one trace file".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    paths
        .iter()
        .map(|path| {
            let trace = read_trace(path).map_err(|e| {
                CliError::Data(format!("{}: {e}", path.display()))
            })?;
            let scn = scenario_for_trace(&trace, config)?;
            let spec = qdyne_core::spectral::fft_trace(&trace)?;
            let (reconstruction, calibration) = analyze_spectrum(&spec, &scn, config)?;
            let peaks = config
                .analysis
                .peak_threshold_sigma
                .map(|thr| find_peaks(&spec, thr, &scn.fit_options()));
            let spectrum_csv = match out {
                Some(dir) => {
                    let stem = path.file_stem().map_or("trace".into(), |s| s.to_string_lossy());
                    let csv = dir.join(format!("{stem}_spectrum.csv"));
                    spec.write_csv(BufWriter::new(File::create(&csv)?))?;
                    Some(display(&csv))
                }
                None => None,
            };
            Ok(TraceAnalysis {
                path: display(path),
                seed: trace.seed,
                n_sequences: trace.n_sequences(),
                total_time_s: trace.total_time_s(),
                window_bins: scn.fit_options().window_bins,
                reconstruction,
                calibration,
                peaks,
                truth: trace.truth.clone(),
                spectrum_csv,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- scaling

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub total_time_s: f64,
    pub n_sequences: usize,
    pub runs: usize,
    pub failed_runs: usize,
    pub window_bins: usize,
    pub frequency_ci_hz: Stat,
    pub frequency_error_hz: Stat,
    pub linewidth_hz: Stat,
    pub amplitude_ci_t: Stat,
    pub phase_ci_rad: Stat,
    pub noise_floor_t: Stat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub frequency_ci: f64,
    pub linewidth: f64,
    pub amplitude_ci: f64,
    pub phase_ci: f64,
    pub noise_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub noiseless: bool,
    pub rungs: Vec<Rung>,
    pub exponents: Exponents,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

struct RunMetrics {
    frequency_ci_hz: f64,
    frequency_error_hz: f64,
    linewidth_hz: f64,
    amplitude_ci_t: f64,
    phase_ci_rad: f64,
    noise_floor_t: f64,
}

fn run_once(
    scn: &Scenario,
    cal: &AmplitudeCalibration,
    seed: Option<u64>,
) -> Result<RunMetrics, CliError> {
    let spec = scn.spectrum(seed)?;
    let fit = fit_peak(&spec, &scn.fit_options())?;
    let truth = scn.signals[0];
    let detuning = scn.sensor.detuning(scn.lo.lo_frequency_hz() + fit.center_hz);
    let amp = estimate_amplitude(&fit, scn.n, cal, scn.sequence.tau_s, detuning)?;
    let phase = estimate_phase(&spec, &fit, None, 1)?;
    let floor = noise_floor(&spec, &fit, scn.noise_window(&spec), Some(&amp));
    let expected_beat = scn.lo.beat_note(truth.frequency_hz).magnitude_hz;
    Ok(RunMetrics {
        frequency_ci_hz: fit.ci95.center_hz,
        frequency_error_hz: fit.center_hz - expected_beat,
        linewidth_hz: fit.fwhm_hz(),
        amplitude_ci_t: amp.ci_t,
        phase_ci_rad: phase.ci_rad,
        noise_floor_t: floor.field_t.unwrap_or(f64::NAN),
    })
}

/// Log-log exponents of the fit intervals, linewidth and noise floor over a ladder
/// of total times. Each rung is calibrated with a known field at the configured beat.
pub fn scaling(config: &Config) -> Result<ScalingResult, CliError> {
    let Some(ladder) = &config.ladder else {
        return Err(CliError::Config("scaling needs a `ladder` section".into()));
    };
    let mut times = ladder.total_times_s.clone();
    if let Some(bad) = times.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(CliError::Config(format!("ladder.total_times_s: {bad} is not a positive time")));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.len() < MIN_RUNGS {
        return Err(CliError::InsufficientLadder(format!(
            "{} distinct total times given, at least {MIN_RUNGS} are needed",
            times.len()
        )));
    }
    let base = Scenario::from_config(config)?;
    let runs = seeds_or_noiseless(config);
    let mut rungs = Vec::with_capacity(times.len());
    for &t in &times {
        let n = (t / base.t_l()).round() as usize;
        let scn = base.with_n(n);
        let cal = scn.calibrate(scn.signals[0].frequency_hz)?;
        let results: Vec<Result<RunMetrics, CliError>> =
            runs.par_iter().map(|&seed| run_once(&scn, &cal, seed)).collect();
        let ok: Vec<RunMetrics> = results.into_iter().filter_map(Result::ok).collect();
        if ok.is_empty() {
            return Err(CliError::Data(format!("every run failed at T = {t} s")));
        }
        let stat = |f: fn(&RunMetrics) -> f64| Stat::of(&ok.iter().map(f).collect::<Vec<_>>());
        rungs.push(Rung {
            total_time_s: scn.total_time_s(),
            n_sequences: n,
            runs: runs.len(),
            failed_runs: runs.len() - ok.len(),
            window_bins: scn.fit_options().window_bins,
            frequency_ci_hz: stat(|m| m.frequency_ci_hz),
            frequency_error_hz: stat(|m| m.frequency_error_hz),
            linewidth_hz: stat(|m| m.linewidth_hz),
            amplitude_ci_t: stat(|m| m.amplitude_ci_t),
            phase_ci_rad: stat(|m| m.phase_ci_rad),
            noise_floor_t: stat(|m| m.noise_floor_t),
        });
    }
    let ts: Vec<f64> = rungs.iter().map(|r| r.total_time_s).collect();
    let slope = |f: fn(&Rung) -> f64| log_log_slope(&ts, &rungs.iter().map(f).collect::<Vec<_>>());
    let exponents = Exponents {
        frequency_ci: slope(|r| r.frequency_ci_hz.mean),
        linewidth: slope(|r| r.linewidth_hz.mean),
        amplitude_ci: slope(|r| r.amplitude_ci_t.mean),
        phase_ci: slope(|r| r.phase_ci_rad.mean),
        noise_floor: slope(|r| r.noise_floor_t.mean),
    };
    Ok(ScalingResult {
        noiseless: config.noiseless,
        rungs,
        exponents,
    })
}

// ---------------------------------------------------------------- resolve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolveOutcome {
    Resolved(Box<ResolvedSignal>),
    Inconclusive(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveRun {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub first: Measurement,
    pub second: Vec<Measurement>,
    pub calibration: AmplitudeCalibration,
    pub outcome: ResolveOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveResult {
    pub modifications: Vec<Modification>,
    pub truth: Vec<SignalField>,
    pub runs: Vec<ResolveRun>,
}

impl ResolveResult {
    pub fn inconclusive(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| matches!(r.outcome, ResolveOutcome::Inconclusive(_)))
            .count()
    }
}

fn measure(scn: &Scenario, seed: Option<u64>) -> Result<Measurement, CliError> {
    let spec = scn.spectrum(seed)?;
    Ok(Measurement::from_spectrum(&spec, &scn.lo, scn.sequence.tau_s, &scn.fit_options())?)
}

fn resolve_run(
    scn: &Scenario,
    plan: &crate::config::ResolutionSpec,
    seed: Option<u64>,
) -> Result<ResolveRun, CliError> {
    let first = measure(scn, seed)?;
    // either sign of the beat lands in the same bin; take the one nearer resonance
    let calibration = [first.beat_hz, -first.beat_hz]
        .map(|b| scn.reference_frequency(b))
        .into_iter()
        .min_by(|a, b| {
            let d = |f: &f64| (f - scn.sensor.resonance_hz).abs();
            d(a).total_cmp(&d(b))
        })
        .map(|f| scn.calibrate(f))
        .expect("two candidates")?;
    let mut second = Vec::with_capacity(plan.modifications.len());
    let mut pairs = Vec::with_capacity(plan.modifications.len());
    for (i, m) in plan.modifications.iter().enumerate() {
        let modified = scn
            .with_lo(m.apply_lo(&scn.lo))?
            .with_tau(m.apply_tau(scn.sequence.tau_s))?;
        let other = measure(&modified, seed.map(|s| s + 1 + i as u64))?;
        second.push(other);
        pairs.push(MeasurementPair::new(first, other, *m)?);
    }
    let ctx = ResolveContext {
        sensor: scn.sensor,
        calibration,
        n_range: plan.n_range,
        omega_max_rad_per_s: plan.omega_max_rad_per_s,
        dephasing: scn.sequence.dephasing,
    };
    let outcome = match resolve_all(&pairs, &ctx) {
        Ok(r) => ResolveOutcome::Resolved(Box::new(r)),
        Err(e) => match CliError::from(e) {
            CliError::Inconclusive(msg) => ResolveOutcome::Inconclusive(msg),
            other => return Err(other),
        },
    };
    Ok(ResolveRun {
        seed,
        first,
        second,
        calibration,
        outcome,
    })
}

/// Measure the configured scenario and one modified copy per planned change, then
/// run the resolution chain. Seeds of the modified measurements follow the base seed.
pub fn resolve(config: &Config) -> Result<ResolveResult, CliError> {
    let Some(plan) = &config.resolution else {
        return Err(CliError::Config("resolve needs a `resolution` section".into()));
    };
    if plan.modifications.is_empty() {
        return Err(CliError::Config("resolution.modifications is empty".into()));
    }
    let scn = Scenario::from_config(config)?;
    let runs = seeds_or_noiseless(config)
        .par_iter()
        .map(|&seed| resolve_run(&scn, plan, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ResolveResult {
        modifications: plan.modifications.clone(),
        truth: scn.signals.clone(),
        runs,
    })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub beat_hz: f64,
    /// Noiseless: `|X|` at the expected beat bin. Otherwise the mean fitted `L₀`.
    pub peak: f64,
    pub peak_ci: f64,
    /// Contrast of the first tone from the drive model.
    pub model_contrast: f64,
    /// `n·(bright − dark)·C/4`, the bin-centred peak height.
    pub model_peak: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peaks_found: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_ci_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_ci_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_floor_t: Option<f64>,
    /// Noise floor times `√T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity_t_per_rthz: Option<f64>,
    /// Phase interval times `√T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_sensitivity_rad_per_rthz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub noiseless: bool,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "value,beat_hz,peak,peak_ci,model_contrast,model_peak,peaks_found,frequency_ci_hz,\
             phase_ci_rad,noise_floor_t,sensitivity_t_per_rthz,phase_sensitivity_rad_per_rthz\n",
        );
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        for r in &self.rows {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},{},{},{}\n",
                r.value,
                r.beat_hz,
                r.peak,
                r.peak_ci,
                r.model_contrast,
                r.model_peak,
                r.peaks_found.map_or(String::new(), |p| p.to_string()),
                opt(r.frequency_ci_hz),
                opt(r.phase_ci_rad),
                opt(r.noise_floor_t),
                opt(r.sensitivity_t_per_rthz),
                opt(r.phase_sensitivity_rad_per_rthz),
            ));
        }
        s
    }
}

fn sweep_point(base: &Scenario, parameter: SweepParameter, value: f64) -> Result<Scenario, CliError> {
    let mut scn = base.clone();
    match parameter {
        SweepParameter::TauS => scn = scn.with_tau(value)?,
        SweepParameter::DetuningHz => scn.sensor.resonance_hz = scn.signals[0].frequency_hz - value,
        SweepParameter::SignalFrequencyHz => {
            scn.signals[0] = SignalField::new(scn.signals[0].amplitude_t, value, scn.signals[0].phase_rad)?
        }
        SweepParameter::AmplitudeT => {
            scn.signals[0] = SignalField::new(value, scn.signals[0].frequency_hz, scn.signals[0].phase_rad)?
        }
        SweepParameter::TotalTimeS => {
            let n = (value / scn.t_l()).round() as usize;
            if n < 2 {
                return Err(CliError::Config(format!("total time {value} s is under two sequences")));
            }
            scn = scn.with_n(n)
        }
    }
    scn.sensor.validate()?;
    Ok(scn)
}

fn model_contrast(scn: &Scenario) -> f64 {
    let tau = scn.sequence.tau_s;
    let damping = if scn.sequence.dephasing {
        dephasing_factor(tau, scn.sensor.t2_star_s)
    } else {
        1.0
    };
    InteractionParams::from_signal(&scn.signals[0], &scn.sensor, tau)
        .map(|p| contrast(&p) * damping)
        .unwrap_or(0.0)
}

struct SeedMetrics {
    peak: f64,
    peak_ci: f64,
    frequency_ci_hz: f64,
    phase_ci_rad: f64,
    noise_floor_t: Option<f64>,
    peaks: Option<usize>,
}

fn sweep_row(scn: &Scenario, config: &Config, value: f64) -> Result<SweepRow, CliError> {
    let beat = scn.lo.beat_note(scn.signals[0].frequency_hz).magnitude_hz;
    let c = model_contrast(scn);
    let model_peak = scn.n as f64 * (scn.sensor.bright_rate - scn.sensor.dark_rate) * c / 4.0;
    let threshold = config.analysis.peak_threshold_sigma;
    let mut row = SweepRow {
        value,
        beat_hz: beat,
        peak: 0.0,
        peak_ci: 0.0,
        model_contrast: c,
        model_peak,
        peaks_found: None,
        frequency_ci_hz: None,
        phase_ci_rad: None,
        noise_floor_t: None,
        sensitivity_t_per_rthz: None,
        phase_sensitivity_rad_per_rthz: None,
    };
    if config.noiseless {
        let spec = scn.spectrum(None)?;
        let bin = ((beat / spec.bin_width_hz).round() as usize).min(spec.len() - 1);
        row.peak = spec.bins[bin].norm();
        row.peaks_found = threshold.map(|t| find_peaks(&spec, t, &scn.fit_options()).len());
        return Ok(row);
    }

    let fit_opts = scn.fit_options();
    let results: Vec<SeedMetrics> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let spec = scn.spectrum(Some(seed))?;
            let fit = fit_peak(&spec, &fit_opts)?;
            let phase = estimate_phase(&spec, &fit, None, 1)?;
            // near the top of the contrast curve noise can leave the branch; the
            // floor then stays in counts
            let amp = if scn.sequence.tau_s > 0.0 {
                let cal = scn.calibrate(scn.reference_frequency(fit.center_hz))?;
                let detuning = scn.sensor.detuning(scn.lo.lo_frequency_hz() + fit.center_hz);
                estimate_amplitude(&fit, scn.n, &cal, scn.sequence.tau_s, detuning).ok()
            } else {
                None
            };
            let window = scn.noise_window(&spec).unwrap_or((fit.window_start, fit.window_end));
            let floor = noise_floor(&spec, &fit, Some(window), amp.as_ref());
            Ok(SeedMetrics {
                peak: fit.amplitude,
                peak_ci: fit.ci95.amplitude,
                frequency_ci_hz: fit.ci95.center_hz,
                phase_ci_rad: phase.ci_rad,
                noise_floor_t: floor.field_t,
                peaks: threshold.map(|t| find_peaks(&spec, t, &fit_opts).len()),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mean = |f: &dyn Fn(&SeedMetrics) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = results.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let root_t = scn.total_time_s().sqrt();
    row.peak = mean(&|r| Some(r.peak)).unwrap_or(f64::NAN);
    row.peak_ci = mean(&|r| Some(r.peak_ci)).unwrap_or(f64::NAN);
    row.peaks_found = results[0].peaks;
    row.frequency_ci_hz = mean(&|r| Some(r.frequency_ci_hz));
    row.phase_ci_rad = mean(&|r| Some(r.phase_ci_rad));
    row.noise_floor_t = mean(&|r| r.noise_floor_t);
    row.sensitivity_t_per_rthz = row.noise_floor_t.map(|f| f * root_t);
    row.phase_sensitivity_rad_per_rthz = row.phase_ci_rad.map(|p| p * root_t);
    Ok(row)
}

pub fn sweep(config: &Config) -> Result<SweepResult, CliError> {
    let Some(spec) = &config.sweep else {
        return Err(CliError::Config("sweep needs a `sweep` section".into()));
    };
    let values = spec.values()?;
    let base = Scenario::from_config(config)?;
    let rows = values
        .iter()
        .map(|&v| sweep_row(&sweep_point(&base, spec.parameter, v)?, config, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult {
        parameter: spec.parameter,
        noiseless: config.noiseless,
        rows,
    })
}
