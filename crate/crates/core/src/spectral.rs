//! Ramp framing, magnitude spectra, cycle averaging and spectral subtraction.
//!
//! Each ramp is Hamming-windowed, zero-padded to a fixed FFT size so that
//! every ramp shares one bin grid, and reduced to its one-sided magnitude
//! spectrum. Spectra of the same ramp index are averaged over a sliding
//! window of cycles and then denoised against a per-ramp calibration:
//!
//! ```text
//! X̂(k) = max(X(k) − α·D̂(k) − β·Σ̂(k), 0)
//! ```

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::{WorkingPoint, RAMPS_PER_CYCLE};

pub const DEFAULT_FFT_BINS: usize = 2048;

/// Smallest number of no-target frames per ramp accepted for calibration.
pub const MIN_CALIBRATION_FRAMES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSpectrum {
    pub ramp_index: usize,
    /// Centre frequency of each bin, Hz.
    pub bin_frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// FFT size after zero-padding; `magnitudes.len() == n_bins / 2`.
    pub n_bins: usize,
}

impl RampSpectrum {
    pub fn bin_width(&self) -> f64 {
        self.bin_frequencies.get(1).copied().unwrap_or(0.0)
    }

    fn same_shape(&self, other: &RampSpectrum) -> bool {
        self.n_bins == other.n_bins && self.magnitudes.len() == other.magnitudes.len()
    }
}

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Reusable window + FFT plan for one frame length and FFT size.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    n_bins: usize,
    bin_frequencies: Vec<f64>,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer")
            .field("frame_len", &self.window.len())
            .field("n_bins", &self.n_bins)
            .finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(frame_len: usize, fft_bins: usize, sampling_rate: f64) -> Result<Self> {
        if !fft_bins.is_power_of_two() || fft_bins < 2 {
            return Err(Error::Parameter(format!(
                "fft_bins must be a power of two, got {fft_bins}"
            )));
        }
        if fft_bins < frame_len {
            return Err(Error::Parameter(format!(
                "fft_bins ({fft_bins}) is smaller than the frame length ({frame_len})"
            )));
        }
        if frame_len == 0 {
            return Err(Error::Parameter("empty frame".into()));
        }
        let df = sampling_rate / fft_bins as f64;
        Ok(SpectrumAnalyzer {
            window: hamming(frame_len),
            fft: FftPlanner::new().plan_fft_forward(fft_bins),
            n_bins: fft_bins,
            bin_frequencies: (0..fft_bins / 2).map(|k| k as f64 * df).collect(),
        })
    }

    pub fn for_working_point(wp: &WorkingPoint, fft_bins: usize) -> Result<Self> {
        Self::new(wp.samples_per_ramp(), fft_bins, wp.sampling_rate)
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn frame_len(&self) -> usize {
        self.window.len()
    }

    pub fn spectrum(&self, ramp_index: usize, frame: &[f64]) -> Result<RampSpectrum> {
        if frame.len() != self.window.len() {
            return Err(Error::Framing(format!(
                "frame has {} samples, analyzer expects {}",
                frame.len(),
                self.window.len()
            )));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_bins];
        for ((slot, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            slot.re = x * w;
        }
        self.fft.process(&mut buf);
        Ok(RampSpectrum {
            ramp_index,
            bin_frequencies: self.bin_frequencies.clone(),
            magnitudes: buf[..self.n_bins / 2].iter().map(|c| c.norm()).collect(),
            n_bins: self.n_bins,
        })
    }
}

/// Splits one cycle of samples into its four ramps.
pub fn slice_cycle<'a>(
    samples: &'a [f64],
    wp: &WorkingPoint,
) -> Result<[&'a [f64]; RAMPS_PER_CYCLE]> {
    let per_ramp = wp.samples_per_ramp();
    if samples.len() != RAMPS_PER_CYCLE * per_ramp {
        return Err(Error::Framing(format!(
            "cycle has {} samples, expected {}",
            samples.len(),
            RAMPS_PER_CYCLE * per_ramp
        )));
    }
    Ok(std::array::from_fn(|i| {
        &samples[i * per_ramp..(i + 1) * per_ramp]
    }))
}

/// Windowed, zero-padded magnitude spectrum of a single frame.
pub fn frame_spectrum(frame: &[f64], wp: &WorkingPoint, fft_bins: usize) -> Result<RampSpectrum> {
    SpectrumAnalyzer::new(frame.len(), fft_bins, wp.sampling_rate)?.spectrum(0, frame)
}

/// Per-bin mean of `history`.
pub fn sliding_average(history: &[RampSpectrum]) -> Result<RampSpectrum> {
    let first = history
        .first()
        .ok_or_else(|| Error::Framing("empty averaging history".into()))?;
    if let Some(bad) = history.iter().find(|s| !s.same_shape(first)) {
        return Err(Error::Framing(format!(
            "spectrum shape {} does not match {}",
            bad.magnitudes.len(),
            first.magnitudes.len()
        )));
    }
    let mut acc = vec![0.0; first.magnitudes.len()];
    for s in history {
        for (a, m) in acc.iter_mut().zip(&s.magnitudes) {
            *a += m;
        }
    }
    let n = history.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(RampSpectrum {
        magnitudes: acc,
        ..first.clone()
    })
}

/// Sliding window of the last `n_avg` spectra for one ramp index.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumHistory {
    n_avg: usize,
    window: VecDeque<RampSpectrum>,
}

impl SpectrumHistory {
    pub fn new(n_avg: usize) -> Self {
        assert!(n_avg >= 1, "n_avg must be >= 1");
        SpectrumHistory {
            n_avg,
            window: VecDeque::with_capacity(n_avg),
        }
    }

    /// Pushes the newest spectrum and returns the current average.
    pub fn push(&mut self, spectrum: RampSpectrum) -> Result<RampSpectrum> {
        if let Some(front) = self.window.front() {
            if !front.same_shape(&spectrum) {
                return Err(Error::Framing("spectrum shape changed mid-stream".into()));
            }
        }
        if self.window.len() == self.n_avg {
            self.window.pop_front();
        }
        self.window.push_back(spectrum);
        sliding_average(self.window.make_contiguous())
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// True until the window has been filled once.
    pub fn warming_up(&self) -> bool {
        self.window.len() < self.n_avg
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    /// Per-bin mean of the no-target spectra, `D̂(k)`.
    pub reference_mean: Vec<f64>,
    /// Per-bin standard deviation, `Σ̂(k)`.
    pub reference_sigma: Vec<f64>,
    pub n_frames_used: usize,
}

/// Per-bin mean and (sample) standard deviation across no-target spectra.
pub fn calibrate(no_target: &[RampSpectrum]) -> Result<CalibrationProfile> {
    if no_target.len() < MIN_CALIBRATION_FRAMES {
        return Err(Error::Calibration(format!(
            "need at least {MIN_CALIBRATION_FRAMES} no-target frames, got {}",
            no_target.len()
        )));
    }
    let mean = sliding_average(no_target)?.magnitudes;
    let n = no_target.len() as f64;
    let mut var = vec![0.0; mean.len()];
    for s in no_target {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(&s.magnitudes) {
            *v += (x - m) * (x - m);
        }
    }
    Ok(CalibrationProfile {
        reference_mean: mean,
        reference_sigma: var.into_iter().map(|v| (v / (n - 1.0)).sqrt()).collect(),
        n_frames_used: no_target.len(),
    })
}

/// Spectral subtraction with flooring at zero.
pub fn subtract_floor(
    spec: &RampSpectrum,
    cal: &CalibrationProfile,
    alpha: f64,
    beta: f64,
) -> Result<RampSpectrum> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::Parameter("alpha and beta must be >= 0".into()));
    }
    let n = spec.magnitudes.len();
    if cal.reference_mean.len() != n || cal.reference_sigma.len() != n {
        return Err(Error::Framing(format!(
            "calibration has {} bins, spectrum has {n}",
            cal.reference_mean.len()
        )));
    }
    let magnitudes = spec
        .magnitudes
        .iter()
        .zip(&cal.reference_mean)
        .zip(&cal.reference_sigma)
        .map(|((x, d), s)| (x - alpha * d - beta * s).max(0.0))
        .collect();
    Ok(RampSpectrum {
        magnitudes,
        ..spec.clone()
    })
}

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

/// Calibration for all four ramp indices plus the metadata needed to
/// refuse it against an incompatible working point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub format_version: u32,
    pub n_bins: usize,
    pub sampling_rate: f64,
    pub samples_per_ramp: usize,
    pub profiles: [CalibrationProfile; RAMPS_PER_CYCLE],
}

impl CalibrationSet {
    /// Builds per-ramp profiles from no-target cycles.
    pub fn from_cycles<I>(cycles: I, wp: &WorkingPoint, fft_bins: usize) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        let analyzer = SpectrumAnalyzer::for_working_point(wp, fft_bins)?;
        let mut per_ramp: [Vec<RampSpectrum>; RAMPS_PER_CYCLE] = Default::default();
        for cycle in cycles {
            let frames = slice_cycle(&cycle, wp)?;
            for (i, frame) in frames.iter().enumerate() {
                per_ramp[i].push(analyzer.spectrum(i, frame)?);
            }
        }
        let profiles = [
            calibrate(&per_ramp[0])?,
            calibrate(&per_ramp[1])?,
            calibrate(&per_ramp[2])?,
            calibrate(&per_ramp[3])?,
        ];
        Ok(CalibrationSet {
            format_version: CALIBRATION_FORMAT_VERSION,
            n_bins: fft_bins,
            sampling_rate: wp.sampling_rate,
            samples_per_ramp: wp.samples_per_ramp(),
            profiles,
        })
    }

    /// A calibration that subtracts nothing.
    pub fn zeros(wp: &WorkingPoint, fft_bins: usize) -> Self {
        let profile = CalibrationProfile {
            reference_mean: vec![0.0; fft_bins / 2],
            reference_sigma: vec![0.0; fft_bins / 2],
            n_frames_used: 1,
        };
        CalibrationSet {
            format_version: CALIBRATION_FORMAT_VERSION,
            n_bins: fft_bins,
            sampling_rate: wp.sampling_rate,
            samples_per_ramp: wp.samples_per_ramp(),
            profiles: std::array::from_fn(|_| profile.clone()),
        }
    }

    pub fn check_compatible(&self, wp: &WorkingPoint, fft_bins: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_bins != fft_bins {
            problems.push(format!("n_bins {} != {}", self.n_bins, fft_bins));
        }
        if self.sampling_rate != wp.sampling_rate {
            problems.push(format!(
                "sampling_rate {} != {}",
                self.sampling_rate, wp.sampling_rate
            ));
        }
        if self.samples_per_ramp != wp.samples_per_ramp() {
            problems.push(format!(
                "samples_per_ramp {} != {}",
                self.samples_per_ramp,
                wp.samples_per_ramp()
            ));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if p.reference_mean.len() != fft_bins / 2 || p.reference_sigma.len() != fft_bins / 2 {
                problems.push(format!("profile {i} has the wrong bin count"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Calibration(format!(
                "calibration does not match the working point: {}",
                problems.join(", ")
            )))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads a calibration and refuses it unless it matches `wp`/`fft_bins`.
    pub fn load(path: &Path, wp: &WorkingPoint, fft_bins: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: CalibrationSet = serde_json::from_str(&text)?;
        if set.format_version != CALIBRATION_FORMAT_VERSION {
            return Err(Error::Calibration(format!(
                "unsupported calibration format version {}",
                set.format_version
            )));
        }
        set.check_compatible(wp, fft_bins)?;
        Ok(set)
    }
}
