//! Synthetic sensor front end.
//!
//! The forward model is the exact algebraic inverse of the two-ramp
//! distance/velocity equations used by the solver: a ramp with signed
//! slope `S_i` sees the signed beat
//!
//! ```text
//! f_i = (2·R·S_i + f_e·v) / c
//! ```
//!
//! Only `|f_i|` is observable. The diode signal is a pure cosine at that
//! frequency plus white Gaussian noise, passed through a Butterworth
//! high-pass that models the hardware AC coupling. Beats below the cutoff
//! are suppressed, which is what creates blind regions.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::{
    build_cycle, RampDescriptor, WorkingPoint, RAMPS_PER_CYCLE, SPEED_OF_LIGHT,
};

/// Order of the Butterworth high-pass. Must be even (cascade of biquads).
pub const HIGHPASS_ORDER: usize = 4;

/// Filter settling time prepended to each synthesized frame, in periods
/// of the cutoff frequency. The pre-roll samples are discarded.
const PREROLL_CUTOFF_PERIODS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Distance to target, m.
    pub distance_r: f64,
    /// Radial velocity, m/s.
    pub velocity_v: f64,
}

impl GroundTruth {
    pub fn new(distance_r: f64, velocity_v: f64) -> Self {
        GroundTruth {
            distance_r,
            velocity_v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub ramp: RampDescriptor,
    pub samples: Vec<f64>,
    /// Signed beat the frame was synthesized from (test bookkeeping only).
    pub true_signed_beat: f64,
    /// `|true_signed_beat| < hp_cutoff`.
    pub blind: bool,
}

/// Signed beat frequency of one ramp for a target at `gt`, Hz.
pub fn signed_beat(wp: &WorkingPoint, ramp: &RampDescriptor, gt: &GroundTruth) -> f64 {
    signed_beat_for_slope(wp, ramp.slope, gt)
}

pub fn signed_beat_for_slope(wp: &WorkingPoint, slope: f64, gt: &GroundTruth) -> f64 {
    (2.0 * gt.distance_r * slope + wp.emitted_frequency * gt.velocity_v) / SPEED_OF_LIGHT
}

/// Signed beats of all four ramps of a cycle.
pub fn cycle_beats(wp: &WorkingPoint, gt: &GroundTruth) -> [f64; RAMPS_PER_CYCLE] {
    wp.slopes().map(|s| signed_beat_for_slope(wp, s, gt))
}

/// One second-order section in direct form I, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    const IDENTITY: Biquad = Biquad {
        b: [1.0, 0.0, 0.0],
        a: [0.0, 0.0],
    };

    fn process(&self, input: &[f64], output: &mut Vec<f64>) {
        output.clear();
        output.reserve(input.len());
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for &x in input {
            let y =
                self.b[0] * x + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            output.push(y);
        }
    }

    /// `|H(e^{jω})|` at `freq` for sampling rate `fs`.
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * c1 + self.b[2] * c2,
            self.b[1] * s1 + self.b[2] * s2,
        );
        let den = (
            1.0 + self.a[0] * c1 + self.a[1] * c2,
            self.a[0] * s1 + self.a[1] * s2,
        );
        num.0.hypot(num.1) / den.0.hypot(den.1)
    }
}

/// Butterworth high-pass realized as a biquad cascade via the bilinear
/// transform with prewarping, so the digital −3 dB point sits exactly at
/// `hp_cutoff`.
#[derive(Debug, Clone, PartialEq)]
pub struct HighPass {
    sections: Vec<Biquad>,
    sampling_rate: f64,
}

impl HighPass {
    pub fn new(wp: &WorkingPoint) -> Self {
        Self::design(wp.hp_cutoff, wp.sampling_rate, HIGHPASS_ORDER)
    }

    pub fn design(cutoff: f64, sampling_rate: f64, order: usize) -> Self {
        assert!(order >= 2 && order.is_multiple_of(2), "order must be even");
        if cutoff <= 0.0 {
            return HighPass {
                sections: vec![Biquad::IDENTITY],
                sampling_rate,
            };
        }
        let k = (PI * cutoff / sampling_rate).tan();
        let k2 = k * k;
        let sections = (0..order / 2)
            .map(|i| {
                // Pole pair of the analog prototype: s² + q·s + 1.
                let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
                let q = 2.0 * theta.sin();
                let norm = 1.0 / (1.0 + q * k + k2);
                Biquad {
                    b: [norm, -2.0 * norm, norm],
                    a: [2.0 * (k2 - 1.0) * norm, (1.0 - q * k + k2) * norm],
                }
            })
            .collect();
        HighPass {
            sections,
            sampling_rate,
        }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Filters from a zero initial state.
    pub fn apply(&self, samples: &[f64]) -> Vec<f64> {
        let mut current = samples.to_vec();
        let mut scratch = Vec::with_capacity(samples.len());
        for section in &self.sections {
            section.process(&current, &mut scratch);
            std::mem::swap(&mut current, &mut scratch);
        }
        current
    }

    pub fn magnitude(&self, freq: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| s.magnitude(freq, self.sampling_rate))
            .product()
    }
}

/// Applies the hardware high-pass model to `samples`.
pub fn highpass(samples: &[f64], wp: &WorkingPoint) -> Result<Vec<f64>> {
    if wp.sampling_rate <= 2.0 * wp.hp_cutoff {
        return Err(Error::Parameter(
            "sampling_rate must exceed 2 x hp_cutoff".into(),
        ));
    }
    Ok(HighPass::new(wp).apply(samples))
}

fn preroll_samples(wp: &WorkingPoint) -> usize {
    if wp.hp_cutoff <= 0.0 {
        return 0;
    }
    (PREROLL_CUTOFF_PERIODS / wp.hp_cutoff * wp.sampling_rate).ceil() as usize
}

/// Synthesizes one ramp of ADC data.
///
/// The cosine and noise start `PREROLL_CUTOFF_PERIODS / hp_cutoff` before
/// the ramp so that the high-pass is settled when the ramp begins; those
/// samples are dropped.
pub fn synthesize_frame(
    wp: &WorkingPoint,
    ramp: &RampDescriptor,
    gt: &GroundTruth,
    amplitude: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticFrame> {
    wp.validate()?;
    if !(amplitude > 0.0) {
        return Err(Error::Parameter("amplitude must be > 0".into()));
    }
    let f_signed = signed_beat(wp, ramp, gt);
    let samples = synthesize_tone(wp, f_signed, amplitude, noise_sigma, seed)?;
    Ok(SyntheticFrame {
        ramp: *ramp,
        samples,
        true_signed_beat: f_signed,
        blind: f_signed.abs() < wp.hp_cutoff,
    })
}

/// Filtered samples of a tone at `|beat|`. `amplitude` may be zero, giving
/// a no-target (noise-only) frame.
pub fn synthesize_tone(
    wp: &WorkingPoint,
    beat: f64,
    amplitude: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(noise_sigma >= 0.0) || !(amplitude >= 0.0) {
        return Err(Error::Parameter(
            "amplitude and noise_sigma must be >= 0".into(),
        ));
    }
    if beat.abs() >= wp.nyquist() {
        return Err(Error::Aliasing {
            beat_hz: beat,
            sampling_rate_hz: wp.sampling_rate,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma checked above");
    let n = wp.samples_per_ramp();
    let pre = preroll_samples(wp);
    let omega = 2.0 * PI * beat.abs() / wp.sampling_rate;
    let raw: Vec<f64> = (0..n + pre)
        .map(|i| {
            let k = i as f64 - pre as f64;
            let tone = amplitude * (omega * k + phase).cos();
            if noise_sigma > 0.0 {
                tone + noise.sample(&mut rng)
            } else {
                tone
            }
        })
        .collect();
    let mut filtered = highpass(&raw, wp)?;
    Ok(filtered.split_off(pre))
}

/// Mixes a base seed with cycle and ramp indices into a per-frame seed.
pub fn frame_seed(base: u64, cycle: u64, ramp: usize) -> u64 {
    let mut z = base
        .wrapping_add(cycle.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((ramp as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters for synthesizing whole cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScene {
    /// `None` for no-target (calibration) data.
    pub target: Option<GroundTruth>,
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// Ramp whose tone is suppressed entirely, forcing it blind.
    #[serde(default)]
    pub muted_ramp: Option<usize>,
}

impl TargetScene {
    pub fn target(gt: GroundTruth, amplitude: f64, noise_sigma: f64) -> Self {
        TargetScene {
            target: Some(gt),
            amplitude,
            noise_sigma,
            muted_ramp: None,
        }
    }

    pub fn empty(noise_sigma: f64) -> Self {
        TargetScene {
            target: None,
            amplitude: 0.0,
            noise_sigma,
            muted_ramp: None,
        }
    }
}

/// One cycle of contiguous ADC samples (four ramps back to back), rounded
/// through `f32` like the recorded frame format.
pub fn synthesize_cycle(
    wp: &WorkingPoint,
    scene: &TargetScene,
    seed: u64,
    cycle: u64,
) -> Result<Vec<f64>> {
    let ramps = build_cycle(wp)?;
    let mut out = Vec::with_capacity(wp.samples_per_cycle());
    for ramp in &ramps {
        let (beat, amp) = match scene.target {
            Some(_) if scene.muted_ramp == Some(ramp.index) => (0.0, 0.0),
            Some(gt) => (signed_beat(wp, ramp, &gt), scene.amplitude),
            None => (0.0, 0.0),
        };
        let frame = synthesize_tone(
            wp,
            beat,
            amp,
            scene.noise_sigma,
            frame_seed(seed, cycle, ramp.index),
        )?;
        out.extend(frame.into_iter().map(|x| x as f32 as f64));
    }
    Ok(out)
}

/// Metadata stored next to a raw `f32` recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSidecar {
    pub format_version: u32,
    pub working_point: WorkingPoint,
    pub ramps: [RampDescriptor; RAMPS_PER_CYCLE],
    pub samples_per_cycle: usize,
    pub n_cycles: usize,
    pub seed: u64,
    pub scene: TargetScene,
}

pub const RECORDING_FORMAT_VERSION: u32 = 1;

/// Writes cycles as little-endian `f32` to `raw_path` and the JSON sidecar
/// to `sidecar_path`.
pub fn write_recording(
    raw_path: &Path,
    sidecar_path: &Path,
    sidecar: &RecordingSidecar,
    cycles: &[Vec<f64>],
) -> Result<()> {
    let file = File::create(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let mut w = BufWriter::new(file);
    for cycle in cycles {
        if cycle.len() != sidecar.samples_per_cycle {
            return Err(Error::Framing(format!(
                "cycle has {} samples, sidecar says {}",
                cycle.len(),
                sidecar.samples_per_cycle
            )));
        }
        for &x in cycle {
            w.write_all(&(x as f32).to_le_bytes())
                .map_err(|e| Error::io(raw_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(raw_path, e))?;
    let json = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(sidecar_path, json + "\n").map_err(|e| Error::io(sidecar_path, e))?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<RecordingSidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: RecordingSidecar = serde_json::from_str(&text)?;
    if sidecar.format_version != RECORDING_FORMAT_VERSION {
        return Err(Error::Framing(format!(
            "unsupported recording format version {}",
            sidecar.format_version
        )));
    }
    if sidecar.samples_per_cycle != sidecar.working_point.samples_per_cycle() {
        return Err(Error::Framing(
            "sidecar samples_per_cycle disagrees with its working point".into(),
        ));
    }
    Ok(sidecar)
}

/// Streams cycles out of a raw `f32` recording.
pub struct RecordingReader {
    reader: BufReader<File>,
    samples_per_cycle: usize,
    path: std::path::PathBuf,
}

impl RecordingReader {
    pub fn open(raw_path: &Path, samples_per_cycle: usize) -> Result<Self> {
        let file = File::open(raw_path).map_err(|e| Error::io(raw_path, e))?;
        let len = file.metadata().map_err(|e| Error::io(raw_path, e))?.len();
        let cycle_bytes = (samples_per_cycle * 4) as u64;
        if cycle_bytes == 0 || len % cycle_bytes != 0 {
            return Err(Error::Framing(format!(
                "{} bytes is not a whole number of {}-sample cycles",
                len, samples_per_cycle
            )));
        }
        Ok(RecordingReader {
            reader: BufReader::new(file),
            samples_per_cycle,
            path: raw_path.to_path_buf(),
        })
    }

    pub fn next_cycle(&mut self) -> Result<Option<Vec<f64>>> {
        let mut buf = vec![0u8; self.samples_per_cycle * 4];
        let mut filled = 0;
        while filled < buf.len() {
            let n = self
                .reader
                .read(&mut buf[filled..])
                .map_err(|e| Error::io(&self.path, e))?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            return Ok(None);
        }
        if filled != buf.len() {
            return Err(Error::Framing("truncated cycle at end of recording".into()));
        }
        Ok(Some(
            buf.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
        ))
    }
}

/// Analytic magnitude of an even-order Butterworth high-pass after the
/// prewarped bilinear transform, used as a test oracle.
pub fn butterworth_highpass_response(
    freq: f64,
    cutoff: f64,
    sampling_rate: f64,
    order: usize,
) -> f64 {
    let omega = (PI * freq / sampling_rate).tan() / (PI * cutoff / sampling_rate).tan();
    let p = omega.powi(order as i32);
    p / (1.0 + p * p).sqrt()
}
