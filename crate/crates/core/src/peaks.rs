//! Beat-frequency extraction from a denoised ramp spectrum.
//!
//! Two steps: pick the strongest bin, then interpolate over a window of
//! neighbouring bins, either by a least-squares Gaussian fit or by the
//! magnitude-weighted mean frequency of the window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::RampSpectrum;

pub const DEFAULT_INTERP_WINDOW: usize = 25;

/// Peaks must exceed this multiple of the median non-zero bin to count.
pub const DEFAULT_VALIDITY_KAPPA: f64 = 10.0;

pub const DEFAULT_VALIDITY_FLOOR: f64 = 1e-9;

const GAUSS_MAX_ITERATIONS: usize = 50;
const GAUSS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationMethod {
    Gaussian,
    WeightedAverage,
}

impl std::fmt::Display for InterpolationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InterpolationMethod::Gaussian => "gaussian",
            InterpolationMethod::WeightedAverage => "weighted_average",
        })
    }
}

impl std::str::FromStr for InterpolationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(InterpolationMethod::Gaussian),
            "weighted_average" => Ok(InterpolationMethod::WeightedAverage),
            other => Err(Error::Parameter(format!(
                "unknown interpolation method `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub ramp_index: usize,
    /// Beat frequency magnitude, Hz. The sign is resolved by the solver.
    pub beat_frequency: f64,
    pub intensity: f64,
    /// Method that actually produced the estimate (a failed Gaussian fit
    /// falls back to the weighted average).
    pub method: InterpolationMethod,
    pub valid: bool,
}

impl PeakEstimate {
    pub fn invalid(ramp_index: usize, method: InterpolationMethod) -> Self {
        PeakEstimate {
            ramp_index,
            beat_frequency: 0.0,
            intensity: 0.0,
            method,
            valid: false,
        }
    }
}

/// Index of the largest magnitude, lowest index on ties.
pub fn find_max_bin(spec: &RampSpectrum) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &m) in spec.magnitudes.iter().enumerate() {
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((k, m));
        }
    }
    match best {
        Some((k, m)) if m > 0.0 => Ok(k),
        _ => Err(Error::NoPeak),
    }
}

fn window_range(len: usize, center: usize, window: usize) -> Result<std::ops::Range<usize>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "interpolation window must be odd, got {window}"
        )));
    }
    if center >= len {
        return Err(Error::Parameter(format!(
            "center bin {center} outside spectrum of {len} bins"
        )));
    }
    let half = window / 2;
    Ok(center.saturating_sub(half)..(center + half + 1).min(len))
}

/// Magnitude-weighted mean frequency over the window around `center_bin`.
pub fn weighted_average_interpolate(
    spec: &RampSpectrum,
    center_bin: usize,
    window: usize,
) -> Result<PeakEstimate> {
    let range = window_range(spec.magnitudes.len(), center_bin, window)?;
    let weights = &spec.magnitudes[range.clone()];
    let freqs = &spec.bin_frequencies[range];
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoPeak);
    }
    let moment: f64 = weights.iter().zip(freqs).map(|(w, f)| w * f).sum();
    Ok(PeakEstimate {
        ramp_index: spec.ramp_index,
        beat_frequency: moment / total,
        intensity: spec.magnitudes[center_bin],
        method: InterpolationMethod::WeightedAverage,
        valid: true,
    })
}

/// Parameters of `a·exp(−(x−b)²/(2c²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl GaussianParams {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// Levenberg–Marquardt fit of a Gaussian to `(xs, ys)`.
///
/// Returns `None` when the iteration produces non-finite parameters, a
/// non-positive width or amplitude, or does not converge within the
/// iteration budget.
pub fn fit_gaussian(xs: &[f64], ys: &[f64], init: GaussianParams) -> Option<GaussianParams> {
    let residual_ss = |p: &[f64; 3]| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let z = (x - p[1]) / p[2];
                let r = y - p[0] * (-0.5 * z * z).exp();
                r * r
            })
            .sum()
    };
    let mut p = [init.amplitude, init.center, init.width];
    let mut cost = residual_ss(&p);
    let mut lambda = 1e-3;
    for _ in 0..GAUSS_MAX_ITERATIONS {
        // Normal equations JᵀJ δ = Jᵀr, with J = ∂model/∂p.
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&x, &y) in xs.iter().zip(ys) {
            let d = x - p[1];
            let e = (-0.5 * d * d / (p[2] * p[2])).exp();
            let model = p[0] * e;
            let j = [
                e,
                model * d / (p[2] * p[2]),
                model * d * d / (p[2] * p[2] * p[2]),
            ];
            let r = y - model;
            for row in 0..3 {
                jtr[row] += j[row] * r;
                for col in 0..3 {
                    jtj[row][col] += j[row] * j[col];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-300);
            }
            let Some(step) = solve3(&damped, &jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            if trial.iter().all(|v| v.is_finite()) && trial[2] > 0.0 && trial[0] > 0.0 {
                let trial_cost = residual_ss(&trial);
                if trial_cost <= cost {
                    let converged = (0..3).all(|i| {
                        step[i].abs() <= GAUSS_TOLERANCE * (trial[i].abs() + GAUSS_TOLERANCE)
                    });
                    p = trial;
                    cost = trial_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if converged {
                        return Some(GaussianParams {
                            amplitude: p[0],
                            center: p[1],
                            width: p[2],
                        });
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step left: we are at a minimum to working precision.
            return Some(GaussianParams {
                amplitude: p[0],
                center: p[1],
                width: p[2],
            });
        }
    }
    None
}

fn solve3(m: &[[f64; 3]; 3], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    if !d.is_finite() || d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut a = *m;
        for row in 0..3 {
            a[row][col] = rhs[row];
        }
        *slot = det(&a) / d;
    }
    Some(out)
}

/// Gaussian least-squares interpolation around `center_bin`, falling back
/// to the weighted average when the fit fails or leaves the window.
pub fn gaussian_interpolate(
    spec: &RampSpectrum,
    center_bin: usize,
    window: usize,
) -> Result<PeakEstimate> {
    let range = window_range(spec.magnitudes.len(), center_bin, window)?;
    let df = spec.bin_width();
    let f0 = spec.bin_frequencies[center_bin];
    // Fit in bin units around the centre bin for conditioning.
    let xs: Vec<f64> = range
        .clone()
        .map(|k| (k as f64) - center_bin as f64)
        .collect();
    let ys = &spec.magnitudes[range.clone()];
    let peak = spec.magnitudes[center_bin];
    if !(peak > 0.0) {
        return Err(Error::NoPeak);
    }
    let init = GaussianParams {
        amplitude: peak,
        center: 0.0,
        width: 2.0,
    };
    let lo = xs[0];
    let hi = xs[xs.len() - 1];
    match fit_gaussian(&xs, ys, init) {
        Some(fit) if fit.center >= lo && fit.center <= hi => Ok(PeakEstimate {
            ramp_index: spec.ramp_index,
            beat_frequency: f0 + fit.center * df,
            intensity: fit.amplitude,
            method: InterpolationMethod::Gaussian,
            valid: true,
        }),
        _ => weighted_average_interpolate(spec, center_bin, window),
    }
}

/// Peak search, interpolation and validity gating in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakDetector {
    pub method: InterpolationMethod,
    pub window: usize,
    pub kappa: f64,
    pub floor: f64,
}

impl Default for PeakDetector {
    fn default() -> Self {
        PeakDetector {
            method: InterpolationMethod::WeightedAverage,
            window: DEFAULT_INTERP_WINDOW,
            kappa: DEFAULT_VALIDITY_KAPPA,
            floor: DEFAULT_VALIDITY_FLOOR,
        }
    }
}

impl PeakDetector {
    pub fn threshold(&self, spec: &RampSpectrum) -> f64 {
        let mut nonzero: Vec<f64> = spec
            .magnitudes
            .iter()
            .copied()
            .filter(|&m| m > 0.0)
            .collect();
        let median = if nonzero.is_empty() {
            0.0
        } else {
            let mid = nonzero.len() / 2;
            let (_, m, _) = nonzero.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            *m
        };
        self.floor.max(self.kappa * median)
    }

    /// Never fails: an empty or all-zero spectrum yields an invalid estimate.
    pub fn detect(&self, spec: &RampSpectrum) -> Result<PeakEstimate> {
        let center = match find_max_bin(spec) {
            Ok(k) => k,
            Err(Error::NoPeak) => return Ok(PeakEstimate::invalid(spec.ramp_index, self.method)),
            Err(e) => return Err(e),
        };
        let estimate = match self.method {
            InterpolationMethod::Gaussian => gaussian_interpolate(spec, center, self.window),
            InterpolationMethod::WeightedAverage => {
                weighted_average_interpolate(spec, center, self.window)
            }
        };
        let mut estimate = match estimate {
            Ok(e) => e,
            Err(Error::NoPeak) => return Ok(PeakEstimate::invalid(spec.ramp_index, self.method)),
            Err(e) => return Err(e),
        };
        estimate.valid = estimate.intensity > self.threshold(spec);
        Ok(estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modulation::WorkingPoint;
    use crate::spectral::frame_spectrum;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn spectrum(values: Vec<f64>, df: f64) -> RampSpectrum {
        let n = values.len();
        RampSpectrum {
            ramp_index: 2,
            bin_frequencies: (0..n).map(|k| k as f64 * df).collect(),
            magnitudes: values,
            n_bins: 2 * n,
        }
    }

    #[test]
    fn max_bin_cases() {
        let mut v = vec![0.0; 16];
        v[9] = 1.0;
        assert_eq!(find_max_bin(&spectrum(v.clone(), 1.0)).unwrap(), 9);
        v[4] = 1.0;
        assert_eq!(find_max_bin(&spectrum(v, 1.0)).unwrap(), 4);
        assert!(matches!(
            find_max_bin(&spectrum(vec![0.0; 8], 1.0)),
            Err(Error::NoPeak)
        ));
    }

    #[test]
    fn weighted_average_degenerate_and_symmetric() {
        let mut v = vec![0.0; 64];
        v[20] = 3.0;
        let s = spectrum(v.clone(), 10.0);
        let e = weighted_average_interpolate(&s, 20, 25).unwrap();
        assert_eq!(e.beat_frequency, 200.0);
        assert_eq!(e.intensity, 3.0);
        v[19] = 1.5;
        v[21] = 1.5;
        let e = weighted_average_interpolate(&spectrum(v, 10.0), 20, 25).unwrap();
        assert_relative_eq!(e.beat_frequency, 200.0, epsilon = 1e-9);
        assert!(matches!(
            weighted_average_interpolate(&spectrum(vec![0.0; 64], 10.0), 20, 25),
            Err(Error::NoPeak)
        ));
    }

    #[test]
    fn window_clipped_at_edges() {
        let mut v = vec![0.0; 32];
        v[0] = 2.0;
        v[1] = 1.0;
        let e = weighted_average_interpolate(&spectrum(v, 1.0), 0, 25).unwrap();
        assert_relative_eq!(e.beat_frequency, 1.0 / 3.0, epsilon = 1e-12);
        assert!(weighted_average_interpolate(&spectrum(vec![1.0; 8], 1.0), 3, 4).is_err());
    }

    #[test]
    fn gaussian_recovers_exact_gaussian_between_bins() {
        let df = 976.5625;
        let truth = GaussianParams {
            amplitude: 7.0,
            center: 40.37,
            width: 3.1,
        };
        let s = spectrum((0..128).map(|k| truth.eval(k as f64)).collect(), df);
        let center = find_max_bin(&s).unwrap();
        let e = gaussian_interpolate(&s, center, 25).unwrap();
        assert_eq!(e.method, InterpolationMethod::Gaussian);
        assert!((e.beat_frequency / df - truth.center).abs() < 0.01);
        assert_relative_eq!(e.intensity, 7.0, max_relative = 1e-6);
    }

    #[test]
    fn gaussian_symmetric_three_bin_peak() {
        let mut v = vec![0.0; 64];
        v[30] = 4.0;
        v[29] = 1.0;
        v[31] = 1.0;
        let e = gaussian_interpolate(&spectrum(v, 5.0), 30, 3).unwrap();
        assert_relative_eq!(e.beat_frequency, 150.0, epsilon = 1e-6);
    }

    #[test]
    fn gaussian_falls_back_when_fit_leaves_window() {
        // A ramp instead of a peak drives the centre out of the window.
        let v: Vec<f64> = (0..64)
            .map(|k| if k <= 10 { k as f64 } else { 0.0 })
            .collect();
        let e = gaussian_interpolate(&spectrum(v, 1.0), 10, 3).unwrap();
        assert_eq!(e.method, InterpolationMethod::WeightedAverage);
    }

    #[test]
    fn clean_tone_estimates_within_tenth_of_a_bin() {
        let wp = WorkingPoint::default();
        let n = wp.samples_per_ramp();
        let df = wp.sampling_rate / 2048.0;
        for (i, f) in [23_456.7, 51_000.0, 87_654.3, 150_321.0]
            .into_iter()
            .enumerate()
        {
            let x: Vec<f64> = (0..n)
                .map(|j| (2.0 * PI * f * j as f64 / wp.sampling_rate + i as f64).cos())
                .collect();
            let s = frame_spectrum(&x, &wp, 2048).unwrap();
            let k = find_max_bin(&s).unwrap();
            let g = gaussian_interpolate(&s, k, 25).unwrap();
            assert!(
                (g.beat_frequency - f).abs() < 0.1 * df,
                "gauss {f}: {}",
                g.beat_frequency
            );
            let w = weighted_average_interpolate(&s, k, 25).unwrap();
            assert!(
                (w.beat_frequency - f).abs() < 0.2 * df,
                "wavg {f}: {}",
                w.beat_frequency
            );
        }
    }

    #[test]
    fn detector_marks_flat_and_empty_spectra_invalid() {
        let det = PeakDetector::default();
        let e = det.detect(&spectrum(vec![0.0; 64], 1.0)).unwrap();
        assert!(!e.valid);
        // Flat floor: the peak does not stand out from the median.
        let e = det.detect(&spectrum(vec![1.0; 64], 1.0)).unwrap();
        assert!(!e.valid);
        let mut v = vec![0.01; 64];
        v[32] = 1.0;
        let e = det.detect(&spectrum(v, 1.0)).unwrap();
        assert!(e.valid);
        assert_eq!(e.ramp_index, 2);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            InterpolationMethod::Gaussian,
            InterpolationMethod::WeightedAverage,
        ] {
            assert_eq!(m.to_string().parse::<InterpolationMethod>().unwrap(), m);
        }
        assert!("parabolic".parse::<InterpolationMethod>().is_err());
    }
}
