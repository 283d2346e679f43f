//! Lorentzian peak fitting, `L(x) = L₀ γ² / ((x₀ − x)² + γ²) + L_off`, by damped
//! Gauss-Newton (Levenberg-Marquardt) iterations on the spectrum magnitude.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{SpectralError, Spectrum};

const Z95: f64 = 1.959_963_984_540_054;
/// A record of length T cannot show a line narrower than its rectangular-window main
/// lobe (HWHM ≈ 0.6 bins). Bounding γ keeps single-bin peaks well posed.
pub const MIN_HWHM_BINS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub window_bins: usize,
    /// Restrict the peak search to this beat-frequency range.
    #[serde(default)]
    pub search_hz: Option<(f64, f64)>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_max_iterations() -> usize {
    200
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window_bins: 50,
            search_hz: None,
            max_iterations: default_max_iterations(),
        }
    }
}

/// Fit result in the units of the supplied abscissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFit {
    /// `[L₀, x₀, γ, L_off]`.
    pub params: [f64; 4],
    pub std_err: [f64; 4],
    pub ssr: f64,
    pub n_points: usize,
    pub iterations: usize,
    /// `JᵀJ` could not be inverted and a pseudo-inverse was used.
    pub singular: bool,
}

impl RawFit {
    pub fn eval(&self, x: f64) -> f64 {
        lorentzian(&self.params, x)
    }

    /// `√(SSR/(N−1))`.
    pub fn residual_noise(&self) -> f64 {
        (self.ssr / (self.n_points as f64 - 1.0)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCi {
    pub amplitude: f64,
    pub center_hz: f64,
    pub hwhm_hz: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub center_hz: f64,
    pub hwhm_hz: f64,
    pub offset: f64,
    /// 95 % half-widths.
    pub ci95: ParamCi,
    pub residual_noise: f64,
    pub bin_width_hz: f64,
    /// Fitted bins `[window_start, window_end)`.
    pub window_start: usize,
    pub window_end: usize,
    pub iterations: usize,
    pub singular_covariance: bool,
}

impl LorentzianFit {
    pub fn eval(&self, f_hz: f64) -> f64 {
        lorentzian(&[self.amplitude, self.center_hz, self.hwhm_hz, self.offset], f_hz)
    }

    pub fn fwhm_hz(&self) -> f64 {
        2.0 * self.hwhm_hz
    }

    /// Peak centre in (fractional) bins.
    pub fn center_bin(&self) -> f64 {
        self.center_hz / self.bin_width_hz
    }

    pub fn center_ci_bins(&self) -> f64 {
        self.ci95.center_hz / self.bin_width_hz
    }
}

fn lorentzian(p: &[f64; 4], x: f64) -> f64 {
    let g2 = p[2] * p[2];
    p[0] * g2 / ((p[1] - x).powi(2) + g2) + p[3]
}

fn jacobian_row(p: &[f64; 4], x: f64) -> Vector4<f64> {
    let (l0, x0, g) = (p[0], p[1], p[2]);
    let u = x0 - x;
    let d = u * u + g * g;
    let d2 = d * d;
    Vector4::new(
        g * g / d,
        -2.0 * l0 * g * g * u / d2,
        2.0 * l0 * g * u * u / d2,
        1.0,
    )
}

fn ssr(p: &[f64; 4], xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (y - lorentzian(p, x)).powi(2)).sum()
}

fn normal_equations(p: &[f64; 4], xs: &[f64], ys: &[f64]) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let j = jacobian_row(p, x);
        jtj += j * j.transpose();
        jtr += j * (y - lorentzian(p, x));
    }
    (jtj, jtr)
}

/// Least-squares Lorentzian through `(xs, ys)` starting from `initial`, with
/// `γ ≥ min_hwhm`.
///
/// Stops when no parameter moves by more than `1e-10` relative, or when the damping
/// grows so large that no further decrease of the residual is possible.
pub fn fit_lorentzian(
    xs: &[f64],
    ys: &[f64],
    initial: [f64; 4],
    max_iterations: usize,
    min_hwhm: f64,
) -> Result<RawFit, SpectralError> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 5 {
        return Err(SpectralError::WindowTooSmall(xs.len()));
    }
    let span = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
    let max_hwhm = 10.0 * span.max(1.0);
    let mut p = initial;
    p[2] = p[2].abs().clamp(min_hwhm, max_hwhm);
    let mut cost = ssr(&p, xs, ys);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&p, xs, ys);
        let mut improved = false;
        while lambda <= 1e12 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(mut step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            if p[2] <= min_hwhm && (step[2] < 0.0 || jtr[2] <= 0.0) {
                // width held on its bound, solve for the other three
                let mut reduced = damped;
                let mut rhs = jtr;
                for i in 0..4 {
                    reduced[(2, i)] = 0.0;
                    reduced[(i, 2)] = 0.0;
                }
                reduced[(2, 2)] = 1.0;
                rhs[2] = 0.0;
                match reduced.cholesky() {
                    Some(c) => step = c.solve(&rhs),
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                }
            }
            let mut trial = p;
            for i in 0..4 {
                trial[i] += step[i];
            }
            trial[2] = trial[2].abs().clamp(min_hwhm, max_hwhm);
            let trial_cost = ssr(&trial, xs, ys);
            if trial_cost.is_finite() && trial_cost <= cost {
                // centre and width are judged against the width, the rest against L₀
                let scale = [p[0].abs(), p[2], p[2], p[0].abs()];
                let rel = (0..4)
                    .map(|i| (trial[i] - p[i]).abs() / (p[i].abs() + scale[i] + f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                // gain ratio against the linear model; a poor ratio means the
                // undamped step overshoots, as it does for large misfit residuals
                let h = Vector4::from_fn(|i, _| trial[i] - p[i]);
                let predicted = 2.0 * h.dot(&jtr) - (h.transpose() * jtj * h)[0];
                let rho = if predicted > 0.0 { (cost - trial_cost) / predicted } else { 1.0 };
                p = trial;
                cost = trial_cost;
                if rho > 0.75 {
                    lambda = (lambda / 3.0).max(1e-12);
                } else if rho < 0.25 {
                    lambda *= 2.0;
                }
                improved = true;
                if rel < 1e-10 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !improved {
            // without improvement even at maximal damping we sit at a minimum
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SpectralError::NotConverged {
            iterations,
            reason: format!("parameters {p:?}, ssr {cost}"),
        });
    }
    let (jtj, _) = normal_equations(&p, xs, ys);
    let (inv, singular) = match jtj.try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => (inv, false),
        _ => (jtj.pseudo_inverse(1e-14).unwrap_or_else(|_| Matrix4::zeros()), true),
    };
    let s2 = cost / (xs.len() as f64 - 4.0);
    let mut std_err = [0.0; 4];
    for (i, se) in std_err.iter_mut().enumerate() {
        *se = (s2 * inv[(i, i)]).max(0.0).sqrt();
    }
    Ok(RawFit {
        params: p,
        std_err,
        ssr: cost,
        n_points: xs.len(),
        iterations,
        singular,
    })
}

/// Highest non-DC bin, optionally inside a frequency range.
pub(crate) fn peak_bin(spec: &Spectrum, mags: &[f64], search_hz: Option<(f64, f64)>) -> usize {
    let (lo, hi) = match search_hz {
        Some((a, b)) => (
            ((a / spec.bin_width_hz).floor().max(1.0) as usize).min(mags.len() - 1),
            ((b / spec.bin_width_hz).ceil() as usize + 1).min(mags.len()),
        ),
        None => (1, mags.len()),
    };
    let hi = hi.max(lo + 1);
    (lo..hi)
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
        .unwrap_or(1)
}

/// Fit bins `[start, end)` around `peak`.
pub(crate) fn fit_range(
    spec: &Spectrum,
    mags: &[f64],
    peak: usize,
    start: usize,
    end: usize,
    max_iterations: usize,
) -> Result<LorentzianFit, SpectralError> {
    if end <= start || end - start < 5 {
        return Err(SpectralError::WindowTooSmall(end.saturating_sub(start)));
    }
    // abscissa relative to the peak keeps the normal equations well conditioned
    let xs: Vec<f64> = (start..end).map(|m| m as f64 - peak as f64).collect();
    let ys = &mags[start..end];
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let init = [mags[peak] - median, 0.0, 2.0, median];
    let raw = fit_lorentzian(&xs, ys, init, max_iterations, MIN_HWHM_BINS)?;
    let bw = spec.bin_width_hz;
    Ok(LorentzianFit {
        amplitude: raw.params[0],
        center_hz: (raw.params[1] + peak as f64) * bw,
        hwhm_hz: raw.params[2].abs() * bw,
        offset: raw.params[3],
        ci95: ParamCi {
            amplitude: Z95 * raw.std_err[0],
            center_hz: Z95 * raw.std_err[1] * bw,
            hwhm_hz: Z95 * raw.std_err[2] * bw,
            offset: Z95 * raw.std_err[3],
        },
        residual_noise: raw.residual_noise(),
        bin_width_hz: bw,
        window_start: start,
        window_end: end,
        iterations: raw.iterations,
        singular_covariance: raw.singular,
    })
}

/// Bins within `half_width` of `center`, clipped to the spectrum and excluding DC.
fn window_around(center: f64, half_width: f64, len: usize) -> (usize, usize) {
    let start = (center - half_width).ceil().max(1.0) as usize;
    let end = ((center + half_width).floor() as usize + 1).min(len);
    (start.min(end), end)
}

/// Fit the global (or range-restricted) peak with a window of `window_bins` bins,
/// clipped to the spectrum and excluding DC.
///
/// A first fit uses a window centred on the peak bin; the window is then re-centred
/// on the fitted x₀ and the fit repeated, so that lineshape misfit in the tails
/// pulls on the centre symmetrically.
pub fn fit_peak(spec: &Spectrum, opts: &FitOptions) -> Result<LorentzianFit, SpectralError> {
    let mags = spec.magnitudes();
    if mags.len() < 6 {
        return Err(SpectralError::WindowTooSmall(mags.len().saturating_sub(1)));
    }
    let peak = peak_bin(spec, &mags, opts.search_hz);
    let half = opts.window_bins as f64 / 2.0;
    let (start, end) = window_around(peak as f64, half, mags.len());
    let first = fit_range(spec, &mags, peak, start, end, opts.max_iterations)?;
    let center = first.center_bin();
    if (center - peak as f64).abs() > 1.0 {
        return Ok(first);
    }
    // an on-grid tone keeps the symmetric window
    let snapped = if (center - center.round()).abs() < 1e-3 { center.round() } else { center };
    let (start, end) = window_around(snapped, half, mags.len());
    if (start, end) == (first.window_start, first.window_end) {
        return Ok(first);
    }
    fit_range(spec, &mags, peak, start, end, opts.max_iterations)
}
