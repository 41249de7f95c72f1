//! Distance/velocity solution from per-ramp beat magnitudes.
//!
//! Any two ramps with distinct slopes give `(R, v)` once the signs of their
//! beats are known:
//!
//! ```text
//! R = c (f1 − f2) / (2 (S1 − S2))
//! v = c (f2·S1 − f1·S2) / (f_e (S1 − S2))
//! ```
//!
//! Spectra only reveal `|f|`, so the solver keeps the three strongest ramps,
//! tries all eight sign assignments and keeps the assignment whose three
//! pairwise solutions agree best. That assignment and its global negation
//! score identically; the one with positive mean distance is the answer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::{WorkingPoint, RAMPS_PER_CYCLE, SPEED_OF_LIGHT};
use crate::peaks::PeakEstimate;

/// Default distance scale of the cluster score, m.
pub const DEFAULT_R_REF: f64 = 0.05;
/// Default velocity scale of the cluster score, m/s.
pub const DEFAULT_V_REF: f64 = 0.1;

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementStatus {
    Ok,
    /// Only three ramps carried a valid peak.
    Degraded,
    Invalid,
}

impl MeasurementStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasurementStatus::Ok => "ok",
            MeasurementStatus::Degraded => "degraded",
            MeasurementStatus::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Measurement {
    pub distance_r: f64,
    pub velocity_v: f64,
    pub sigma_r: f64,
    pub sigma_v: f64,
    /// Sign (+1/−1) applied to each selected ramp's beat magnitude.
    pub sign_combo: Vec<i8>,
    /// Ramp indices used, ascending.
    pub selected_ramps: Vec<usize>,
    pub cluster_spread: f64,
    pub status: MeasurementStatus,
}

/// Floats compare bitwise, so two invalid measurements are equal.
impl PartialEq for Measurement {
    fn eq(&self, other: &Self) -> bool {
        let bits = |m: &Measurement| {
            [
                m.distance_r,
                m.velocity_v,
                m.sigma_r,
                m.sigma_v,
                m.cluster_spread,
            ]
            .map(f64::to_bits)
        };
        bits(self) == bits(other)
            && self.sign_combo == other.sign_combo
            && self.selected_ramps == other.selected_ramps
            && self.status == other.status
    }
}

impl Measurement {
    pub fn invalid() -> Self {
        Measurement {
            distance_r: f64::NAN,
            velocity_v: f64::NAN,
            sigma_r: f64::NAN,
            sigma_v: f64::NAN,
            sign_combo: Vec::new(),
            selected_ramps: Vec::new(),
            cluster_spread: f64::NAN,
            status: MeasurementStatus::Invalid,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.status != MeasurementStatus::Invalid
    }

    /// Fills `sigma_r`/`sigma_v` from per-ramp beat noise using the selected
    /// pair with the largest slope difference.
    pub fn attach_uncertainty(
        &mut self,
        wp: &WorkingPoint,
        beat_sigmas: &[f64; RAMPS_PER_CYCLE],
    ) -> Result<()> {
        if !self.is_valid() {
            return Ok(());
        }
        let slopes = wp.slopes();
        let (i, j) = PAIRS
            .iter()
            .map(|&(a, b)| (self.selected_ramps[a], self.selected_ramps[b]))
            .max_by(|a, b| {
                let da = (slopes[a.0] - slopes[a.1]).abs();
                let db = (slopes[b.0] - slopes[b.1]).abs();
                da.total_cmp(&db)
            })
            .expect("three pairs");
        let (sr, sv) = propagate_noise(
            beat_sigmas[i],
            beat_sigmas[j],
            slopes[i],
            slopes[j],
            wp.emitted_frequency,
        )?;
        self.sigma_r = sr;
        self.sigma_v = sv;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub r_ref: f64,
    pub v_ref: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            r_ref: DEFAULT_R_REF,
            v_ref: DEFAULT_V_REF,
        }
    }
}

/// `(R, v)` from two signed beats on ramps with slopes `s1 != s2`.
pub fn pair_solution(f1: f64, s1: f64, f2: f64, s2: f64, f_e: f64) -> Result<(f64, f64)> {
    if s1 == s2 {
        return Err(Error::DegeneratePair(s1));
    }
    if f_e == 0.0 {
        return Err(Error::Parameter(
            "emitted frequency must be non-zero".into(),
        ));
    }
    let ds = s1 - s2;
    let r = SPEED_OF_LIGHT * (f1 - f2) / (2.0 * ds);
    let v = SPEED_OF_LIGHT * (f2 * s1 - f1 * s2) / (f_e * ds);
    Ok((r, v))
}

/// First-order propagation of beat-frequency noise into `(σ_R, σ_v)`.
pub fn propagate_noise(
    sigma_f1: f64,
    sigma_f2: f64,
    s1: f64,
    s2: f64,
    f_e: f64,
) -> Result<(f64, f64)> {
    if s1 == s2 {
        return Err(Error::DegeneratePair(s1));
    }
    if !(sigma_f1 >= 0.0 && sigma_f2 >= 0.0) {
        return Err(Error::Parameter("beat sigmas must be >= 0".into()));
    }
    let ds = (s1 - s2).abs();
    let lambda = SPEED_OF_LIGHT / f_e;
    let sigma_r = SPEED_OF_LIGHT * sigma_f1.hypot(sigma_f2) / (2.0 * ds);
    let sigma_v = lambda * (s1 * sigma_f2).hypot(s2 * sigma_f1) / ds;
    Ok((sigma_r, sigma_v))
}

/// Classic up/down triangle decomposition: `(f_R, f_v)`.
pub fn simplified_solution(f_up: f64, f_down: f64) -> (f64, f64) {
    ((f_up + f_down) / 2.0, (f_up - f_down) / 2.0)
}

/// Baseline `(R, v)` from the steep triangle's beat magnitudes, assuming the
/// distance term dominates both beats.
pub fn simplified_measurement(f_up: f64, f_down: f64, wp: &WorkingPoint) -> (f64, f64) {
    let (f_r, f_v) = simplified_solution(f_up, f_down);
    (
        SPEED_OF_LIGHT * f_r / (2.0 * wp.steep_slope),
        SPEED_OF_LIGHT * f_v / wp.emitted_frequency,
    )
}

/// Scored candidate for one sign assignment of the selected ramps.
#[derive(Debug, Clone, PartialEq)]
pub struct SignCandidate {
    pub signs: [i8; 3],
    pub pair_solutions: [(f64, f64); 3],
    pub mean_r: f64,
    pub mean_v: f64,
    pub spread: f64,
}

/// Evaluates all eight sign assignments for three ramps.
///
/// `magnitudes[i]` belongs to the ramp with slope `slopes[i]`.
pub fn enumerate_signs(
    magnitudes: [f64; 3],
    slopes: [f64; 3],
    f_e: f64,
    cfg: &SolverConfig,
) -> Result<Vec<SignCandidate>> {
    let mut out = Vec::with_capacity(8);
    for mask in 0..8u8 {
        let signs: [i8; 3] = std::array::from_fn(|i| if mask >> i & 1 == 0 { 1 } else { -1 });
        let f: [f64; 3] = std::array::from_fn(|i| signs[i] as f64 * magnitudes[i]);
        let mut sols = [(0.0, 0.0); 3];
        for (slot, &(a, b)) in sols.iter_mut().zip(&PAIRS) {
            *slot = pair_solution(f[a], slopes[a], f[b], slopes[b], f_e)?;
        }
        let mean_r = sols.iter().map(|s| s.0).sum::<f64>() / 3.0;
        let mean_v = sols.iter().map(|s| s.1).sum::<f64>() / 3.0;
        let var_r = sols.iter().map(|s| (s.0 - mean_r).powi(2)).sum::<f64>() / 3.0;
        let var_v = sols.iter().map(|s| (s.1 - mean_v).powi(2)).sum::<f64>() / 3.0;
        out.push(SignCandidate {
            signs,
            pair_solutions: sols,
            mean_r,
            mean_v,
            spread: (var_r / (cfg.r_ref * cfg.r_ref) + var_v / (cfg.v_ref * cfg.v_ref)).sqrt(),
        });
    }
    Ok(out)
}

/// Ramps kept for solving: all valid ones when exactly three are valid,
/// otherwise the three with the highest intensity. Returned ascending.
pub fn select_ramps(peaks: &[PeakEstimate; RAMPS_PER_CYCLE]) -> Option<[usize; 3]> {
    let mut valid: Vec<usize> = (0..RAMPS_PER_CYCLE).filter(|&i| peaks[i].valid).collect();
    if valid.len() < 3 {
        return None;
    }
    // Stable sort: on equal intensity the later ramp is dropped.
    valid.sort_by(|&a, &b| peaks[b].intensity.total_cmp(&peaks[a].intensity));
    let mut kept = [valid[0], valid[1], valid[2]];
    kept.sort_unstable();
    Some(kept)
}

/// Resolves signs and solves for `(R, v)`. Uncertainties are left as NaN;
/// see [`Measurement::attach_uncertainty`].
pub fn disambiguate(
    peaks: &[PeakEstimate; RAMPS_PER_CYCLE],
    wp: &WorkingPoint,
    cfg: &SolverConfig,
) -> Result<Measurement> {
    let valid_count = peaks.iter().filter(|p| p.valid).count();
    let Some(kept) = select_ramps(peaks) else {
        return Ok(Measurement::invalid());
    };
    let all_slopes = wp.slopes();
    let magnitudes = kept.map(|i| peaks[i].beat_frequency);
    let slopes = kept.map(|i| all_slopes[i]);
    let candidates = enumerate_signs(magnitudes, slopes, wp.emitted_frequency, cfg)?;

    // Distance from the nearest blind zone of the solution, used to break
    // ties between non-mirrored assignments.
    let clearance = |c: &SignCandidate| {
        all_slopes
            .iter()
            .map(|&s| {
                ((2.0 * c.mean_r * s + wp.emitted_frequency * c.mean_v) / SPEED_OF_LIGHT).abs()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let best = candidates
        .iter()
        .filter(|c| c.mean_r > 0.0 && c.spread.is_finite())
        .min_by(|a, b| {
            a.spread
                .total_cmp(&b.spread)
                .then_with(|| clearance(b).total_cmp(&clearance(a)))
        });
    let Some(best) = best else {
        return Ok(Measurement::invalid());
    };
    Ok(Measurement {
        distance_r: best.mean_r,
        velocity_v: best.mean_v,
        sigma_r: f64::NAN,
        sigma_v: f64::NAN,
        sign_combo: best.signs.to_vec(),
        selected_ramps: kept.to_vec(),
        cluster_spread: best.spread,
        status: if valid_count == RAMPS_PER_CYCLE {
            MeasurementStatus::Ok
        } else {
            MeasurementStatus::Degraded
        },
    })
}
