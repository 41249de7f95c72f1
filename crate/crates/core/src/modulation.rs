//! Four-ramp modulation pattern.
//!
//! One modulation cycle consists of two triangles with different slopes:
//! a steep triangle (`+S`, `-S`) followed by a shallow one (`+rt·S`,
//! `-rt·S`). All four ramps share the same duration, so the cycle lasts
//! `4 × ramp_duration` and the measurement rate is its reciprocal.
//!
//! ```text
//!  f
//!  │    /\
//!  │   /  \   /\
//!  │  /    \ /  \
//!  └─┴──────┴────┴── t
//!    steep    shallow
//! ```
//!
//! The ramp *rate* `f_ramp` used by the noise model is `1 / ramp_duration`.

use serde::{Deserialize, Serialize};

use crate::config::{self, KeyValues};
use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Emission wavelength of the VCSEL the defaults are built around.
pub const DEFAULT_WAVELENGTH_M: f64 = 848e-9;

/// Number of ramps in one modulation cycle.
pub const RAMPS_PER_CYCLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingPoint {
    /// Duration of a single ramp, seconds.
    pub ramp_duration: f64,
    /// Optical frequency slope of the steep triangle, Hz/s.
    pub steep_slope: f64,
    /// Shallow-to-steep slope ratio, in (0, 1).
    pub ratio_rt: f64,
    /// Mean emitted optical frequency, Hz.
    pub emitted_frequency: f64,
    /// Hardware high-pass threshold, Hz.
    pub hp_cutoff: f64,
    /// ADC sampling rate, Hz.
    pub sampling_rate: f64,
}

impl Default for WorkingPoint {
    /// Short-range eye-tracking style operation: 1 kHz cycle rate, 10 kHz
    /// high-pass, a steep beat of roughly 22 kHz at 2 cm.
    fn default() -> Self {
        WorkingPoint {
            ramp_duration: 250e-6,
            steep_slope: 1.67e14,
            ratio_rt: 0.5,
            emitted_frequency: SPEED_OF_LIGHT / DEFAULT_WAVELENGTH_M,
            hp_cutoff: 10e3,
            sampling_rate: 2e6,
        }
    }
}

impl WorkingPoint {
    pub const KEYS: [&'static str; 6] = [
        "ramp_duration_s",
        "steep_slope_hz_per_s",
        "ratio_rt",
        "emitted_frequency_hz",
        "hp_cutoff_hz",
        "sampling_rate_hz",
    ];

    /// Checks every field invariant, naming the first violation.
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 7] = [
            (
                self.ramp_duration.is_finite() && self.ramp_duration > 0.0,
                "ramp_duration must be > 0",
            ),
            (
                self.steep_slope.is_finite() && self.steep_slope > 0.0,
                "steep_slope must be > 0",
            ),
            (
                self.ratio_rt > 0.0 && self.ratio_rt < 1.0,
                "ratio_rt must lie in (0, 1)",
            ),
            (
                self.emitted_frequency.is_finite() && self.emitted_frequency > 0.0,
                "emitted_frequency must be > 0",
            ),
            (
                self.hp_cutoff.is_finite() && self.hp_cutoff >= 0.0,
                "hp_cutoff must be >= 0",
            ),
            (
                self.sampling_rate.is_finite() && self.sampling_rate > 2.0 * self.hp_cutoff,
                "sampling_rate must exceed 2 x hp_cutoff",
            ),
            (
                self.samples_per_ramp() >= 4,
                "a ramp must span at least 4 samples",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Parameter((*msg).to_string())),
            None => Ok(()),
        }
    }

    pub fn cycle_duration(&self) -> f64 {
        RAMPS_PER_CYCLE as f64 * self.ramp_duration
    }

    /// Measurements per second without averaging.
    pub fn measurement_rate(&self) -> f64 {
        1.0 / self.cycle_duration()
    }

    /// `f_ramp`, the reciprocal of the ramp duration.
    pub fn ramp_rate(&self) -> f64 {
        1.0 / self.ramp_duration
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.emitted_frequency
    }

    pub fn nyquist(&self) -> f64 {
        self.sampling_rate / 2.0
    }

    pub fn samples_per_ramp(&self) -> usize {
        (self.ramp_duration * self.sampling_rate).round() as usize
    }

    pub fn samples_per_cycle(&self) -> usize {
        RAMPS_PER_CYCLE * self.samples_per_ramp()
    }

    /// Signed slopes in cycle order: `+S, -S, +rt·S, -rt·S`.
    pub fn slopes(&self) -> [f64; RAMPS_PER_CYCLE] {
        let s = self.steep_slope;
        let shallow = self.ratio_rt * s;
        [s, -s, shallow, -shallow]
    }

    /// Peak optical frequency excursion of the steep triangle, Hz.
    pub fn peak_excursion(&self) -> f64 {
        self.steep_slope * self.ramp_duration
    }

    /// Checks the steep excursion against a hardware limit. Slope and
    /// duration are independent parameters here; a tuning range couples them.
    pub fn check_excursion(&self, max_excursion_hz: f64) -> Result<()> {
        if self.peak_excursion() > max_excursion_hz {
            return Err(Error::Parameter(format!(
                "steep excursion {:.4e} Hz exceeds limit {:.4e} Hz",
                self.peak_excursion(),
                max_excursion_hz
            )));
        }
        Ok(())
    }

    /// Reads the working-point keys out of `kv`, leaving other keys in place.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self> {
        let d = WorkingPoint::default();
        let wp = WorkingPoint {
            ramp_duration: kv.take("ramp_duration_s")?.unwrap_or(d.ramp_duration),
            steep_slope: kv.take("steep_slope_hz_per_s")?.unwrap_or(d.steep_slope),
            ratio_rt: kv.take("ratio_rt")?.unwrap_or(d.ratio_rt),
            emitted_frequency: kv
                .take("emitted_frequency_hz")?
                .unwrap_or(d.emitted_frequency),
            hp_cutoff: kv.take("hp_cutoff_hz")?.unwrap_or(d.hp_cutoff),
            sampling_rate: kv.take("sampling_rate_hz")?.unwrap_or(d.sampling_rate),
        };
        wp.validate()?;
        Ok(wp)
    }

    /// Parses a config file that holds only working-point keys.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let wp = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(wp)
    }

    pub fn config_pairs(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.ramp_duration,
            self.steep_slope,
            self.ratio_rt,
            self.emitted_frequency,
            self.hp_cutoff,
            self.sampling_rate,
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| (*k, format!("{v:?}")))
            .collect()
    }

    pub fn to_config_string(&self) -> String {
        config::render(&self.config_pairs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampDescriptor {
    /// Position within the cycle, 0..4.
    pub index: usize,
    /// Signed optical frequency slope, Hz/s.
    pub slope: f64,
    /// Start time relative to the cycle start, seconds.
    pub start_time: f64,
    pub duration: f64,
}

/// Ramps of one cycle ordered steep-up, steep-down, shallow-up, shallow-down.
pub fn build_cycle(wp: &WorkingPoint) -> Result<[RampDescriptor; RAMPS_PER_CYCLE]> {
    wp.validate()?;
    let slopes = wp.slopes();
    Ok(std::array::from_fn(|index| RampDescriptor {
        index,
        slope: slopes[index],
        start_time: index as f64 * wp.ramp_duration,
        duration: wp.ramp_duration,
    }))
}

/// Instantaneous optical frequency offset over one cycle, sampled at
/// `n_samples` evenly spaced instants including both cycle endpoints.
pub fn modulation_waveform(wp: &WorkingPoint, n_samples: usize) -> Result<Vec<f64>> {
    let ramps = build_cycle(wp)?;
    if n_samples < 4 * RAMPS_PER_CYCLE {
        return Err(Error::Parameter(format!(
            "need at least 4 samples per ramp, got {n_samples} for the cycle"
        )));
    }
    let period = wp.cycle_duration();
    let step = period / (n_samples - 1) as f64;
    let out = (0..n_samples)
        .map(|i| {
            let t = i as f64 * step;
            let ramp = ((t / wp.ramp_duration) as usize).min(RAMPS_PER_CYCLE - 1);
            let local = t - ramps[ramp].start_time;
            // Up ramps start at the baseline, down ramps at their triangle's peak.
            let start = if ramps[ramp].slope > 0.0 {
                0.0
            } else {
                -ramps[ramp].slope * wp.ramp_duration
            };
            start + ramps[ramp].slope * local
        })
        .collect();
    Ok(out)
}
