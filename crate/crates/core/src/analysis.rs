//! Offline analyses: blind regions, minimum reliable distance and the
//! log-log-linear beat-noise model.
//!
//! A ramp is blind wherever `|2·R·S_i + f_e·v| < hp_cutoff·c`. For a fixed
//! distance that is an open velocity interval of half-width
//! `hp_cutoff·λ` centred on `−2·R·S_i / f_e`; the four intervals move apart
//! as `R` grows, so double blindness is confined to short distances.
//!
//! The noise model regresses the beat-frequency noise on the working point
//! and the measured values in log₁₀ space:
//!
//! ```text
//! log(√n_avg·σ_fb) = a1·log f_ramp + a2·log S + a3·log f_b + a4·log v + a5·log R + b
//! ```

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::{WorkingPoint, RAMPS_PER_CYCLE, SPEED_OF_LIGHT};
use crate::simulator::{cycle_beats, GroundTruth};

/// Upper end of the minimum-distance search, m.
pub const DEFAULT_SEARCH_MAX_M: f64 = 0.1;

/// Bisection stops once the bracket is narrower than this, m.
const DISTANCE_RESOLUTION_M: f64 = 1e-5;

const COARSE_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindMap {
    pub v_axis: Vec<f64>,
    pub r_axis: Vec<f64>,
    /// Row-major over `r_axis`, then `v_axis`: `blind_count[ir][iv]`.
    pub blind_count: Vec<Vec<u8>>,
}

impl BlindMap {
    pub fn count(&self, iv: usize, ir: usize) -> u8 {
        self.blind_count[ir][iv]
    }

    /// Long format: one `v_mps,r_m,blind_count` row per cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["v_mps", "r_m", "blind_count"])?;
        for (ir, r) in self.r_axis.iter().enumerate() {
            for (iv, v) in self.v_axis.iter().enumerate() {
                w.write_record([
                    format!("{v:?}"),
                    format!("{r:?}"),
                    self.count(iv, ir).to_string(),
                ])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Dense grid: header row of velocities, then one row per distance.
    pub fn write_grid<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["r_m\\v_mps".to_string()];
        header.extend(self.v_axis.iter().map(|v| format!("{v:?}")));
        w.write_record(&header)?;
        for (ir, r) in self.r_axis.iter().enumerate() {
            let mut row = vec![format!("{r:?}")];
            row.extend(self.blind_count[ir].iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Number of ramps whose beat falls below the high-pass cutoff.
pub fn blind_count(wp: &WorkingPoint, gt: &GroundTruth) -> u8 {
    cycle_beats(wp, gt)
        .iter()
        .filter(|f| f.abs() < wp.hp_cutoff)
        .count() as u8
}

/// Blind-ramp counts over an `n_v × n_r` grid spanning both ranges inclusively.
pub fn blind_map(
    wp: &WorkingPoint,
    v_range: (f64, f64),
    r_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<BlindMap> {
    wp.validate()?;
    let (n_v, n_r) = resolution;
    if n_v < 2 || n_r < 2 {
        return Err(Error::Parameter(
            "blind map needs at least 2 points per axis".into(),
        ));
    }
    if !(v_range.1 > v_range.0) || !(r_range.1 > r_range.0) {
        return Err(Error::Parameter(
            "axis ranges must be non-empty and increasing".into(),
        ));
    }
    let v_axis = linspace(v_range.0, v_range.1, n_v);
    let r_axis = linspace(r_range.0, r_range.1, n_r);
    let blind_count = r_axis
        .iter()
        .map(|&r| {
            v_axis
                .iter()
                .map(|&v| blind_count(wp, &GroundTruth::new(r, v)))
                .collect()
        })
        .collect();
    Ok(BlindMap {
        v_axis,
        r_axis,
        blind_count,
    })
}

/// Largest number of simultaneously blind ramps over `|v| <= v_max` at
/// distance `r`, evaluated exactly from the blind intervals.
pub fn worst_blind_count(wp: &WorkingPoint, r: f64, v_max: f64) -> u8 {
    if wp.hp_cutoff <= 0.0 {
        return 0;
    }
    let half = wp.hp_cutoff * SPEED_OF_LIGHT / wp.emitted_frequency;
    let intervals: Vec<(f64, f64)> = wp
        .slopes()
        .iter()
        .map(|&s| {
            let c = -2.0 * r * s / wp.emitted_frequency;
            (c - half, c + half)
        })
        .collect();
    let mut cuts: Vec<f64> = vec![-v_max, v_max];
    for &(lo, hi) in &intervals {
        cuts.extend([lo, hi].into_iter().filter(|x| x.abs() <= v_max));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    // Open intervals: their maximum overlap is attained at a cell midpoint
    // or, for cells of zero width, at the cut itself.
    let mut probes = cuts.clone();
    probes.extend(cuts.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    probes
        .iter()
        .map(|&v| {
            intervals
                .iter()
                .filter(|(lo, hi)| *lo < v && v < *hi)
                .count() as u8
        })
        .max()
        .unwrap_or(0)
}

/// Smallest distance from which at most one ramp can be blind for any
/// `|v| <= v_max`, searched on `[0, search_max]`.
pub fn min_reliable_distance(wp: &WorkingPoint, v_max: f64) -> Result<f64> {
    min_reliable_distance_in(wp, v_max, DEFAULT_SEARCH_MAX_M)
}

pub fn min_reliable_distance_in(wp: &WorkingPoint, v_max: f64, search_max: f64) -> Result<f64> {
    wp.validate()?;
    if !(v_max > 0.0) {
        return Err(Error::Parameter("v_max must be > 0".into()));
    }
    let reliable = |r: f64| worst_blind_count(wp, r, v_max) <= 1;
    if !reliable(search_max) {
        return Err(Error::Unbounded {
            search_max_m: search_max,
        });
    }
    // Coarse scan for the last unreliable grid point, then bisect above it.
    let step = search_max / COARSE_STEPS as f64;
    let last_bad = (0..=COARSE_STEPS)
        .rev()
        .map(|i| i as f64 * step)
        .find(|&r| !reliable(r));
    let Some(mut lo) = last_bad else {
        return Ok(0.0);
    };
    let mut hi = lo + step;
    while hi - lo > DISTANCE_RESOLUTION_M {
        let mid = 0.5 * (lo + hi);
        if reliable(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Closed-form bound: ramps `i`, `j` can only be blind together while
/// `R < hp_cutoff·c / |S_i − S_j|`. Ignores the velocity limit.
pub fn pairwise_overlap_bound(wp: &WorkingPoint) -> f64 {
    let s = wp.slopes();
    let mut worst: f64 = 0.0;
    for i in 0..RAMPS_PER_CYCLE {
        for j in (i + 1)..RAMPS_PER_CYCLE {
            worst = worst.max(wp.hp_cutoff * SPEED_OF_LIGHT / (s[i] - s[j]).abs());
        }
    }
    worst
}

/// Regressors of the noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRegressors {
    /// Ramp rate `1 / ramp_duration`, Hz.
    pub f_ramp_rate: f64,
    pub slope_s: f64,
    pub beat_f_b: f64,
    pub velocity_v: f64,
    pub distance_r: f64,
    pub n_avg: u32,
}

/// One row of a noise characterization: regressors plus measured `σ_fb`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseObservation {
    pub f_ramp_rate: f64,
    pub slope_s: f64,
    pub beat_f_b: f64,
    pub velocity_v: f64,
    pub distance_r: f64,
    pub n_avg: u32,
    pub observed_sigma_fb: f64,
}

impl NoiseObservation {
    pub fn new(x: NoiseRegressors, observed_sigma_fb: f64) -> Self {
        NoiseObservation {
            f_ramp_rate: x.f_ramp_rate,
            slope_s: x.slope_s,
            beat_f_b: x.beat_f_b,
            velocity_v: x.velocity_v,
            distance_r: x.distance_r,
            n_avg: x.n_avg,
            observed_sigma_fb,
        }
    }

    pub fn regressors(&self) -> NoiseRegressors {
        NoiseRegressors {
            f_ramp_rate: self.f_ramp_rate,
            slope_s: self.slope_s,
            beat_f_b: self.beat_f_b,
            velocity_v: self.velocity_v,
            distance_r: self.distance_r,
            n_avg: self.n_avg,
        }
    }
}

pub const REGRESSOR_NAMES: [&str; 5] = [
    "f_ramp_rate",
    "slope_s",
    "beat_f_b",
    "velocity_v",
    "distance_r",
];

impl NoiseRegressors {
    fn log_row(&self) -> Result<[f64; 5]> {
        let values = [
            self.f_ramp_rate,
            self.slope_s,
            self.beat_f_b,
            self.velocity_v,
            self.distance_r,
        ];
        for (name, v) in REGRESSOR_NAMES.iter().zip(values) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain {
                    field: name,
                    value: v,
                });
            }
        }
        if self.n_avg == 0 {
            return Err(Error::Domain {
                field: "n_avg",
                value: 0.0,
            });
        }
        Ok(values.map(f64::log10))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelCoefficients {
    /// Slopes for log f_ramp, log S, log f_b, log v, log R.
    pub a: [f64; 5],
    pub b: f64,
    /// RMS residual in log₁₀ units.
    pub fit_residual: f64,
    /// Standard errors of `a1..a5, b`; zero for an exact fit.
    pub standard_errors: [f64; 6],
    pub n_observations: usize,
}

impl NoiseModelCoefficients {
    /// A model predicting a constant `σ_fb = sigma_hz / √n_avg`.
    pub fn constant(sigma_hz: f64) -> Self {
        NoiseModelCoefficients {
            a: [0.0; 5],
            b: sigma_hz.log10(),
            fit_residual: 0.0,
            standard_errors: [0.0; 6],
            n_observations: 0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Ordinary least squares of the log-log noise model.
pub fn fit_noise_model(observations: &[NoiseObservation]) -> Result<NoiseModelCoefficients> {
    const P: usize = 6;
    if observations.len() < 12 {
        return Err(Error::Fit(format!(
            "need at least 12 observations, got {}",
            observations.len()
        )));
    }
    let n = observations.len();
    let mut x = DMatrix::<f64>::zeros(n, P);
    let mut y = DVector::<f64>::zeros(n);
    for (i, obs) in observations.iter().enumerate() {
        let row = obs.regressors().log_row()?;
        if !(obs.observed_sigma_fb > 0.0) {
            return Err(Error::Domain {
                field: "observed_sigma_fb",
                value: obs.observed_sigma_fb,
            });
        }
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
        x[(i, 5)] = 1.0;
        y[i] = ((obs.n_avg as f64).sqrt() * obs.observed_sigma_fb).log10();
    }
    for (j, name) in REGRESSOR_NAMES.iter().enumerate() {
        let col = x.column(j);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(Error::Fit(format!("regressor {name} takes a single value")));
        }
    }

    // Scale columns to unit norm so the rank test is not dominated by units.
    let norms: Vec<f64> = (0..P).map(|j| x.column(j).norm()).collect();
    let mut xs = x.clone();
    for (j, &s) in norms.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = xs.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (imin, smin) =
        sv.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (i, &s)| {
                if s < acc.1 {
                    (i, s)
                } else {
                    acc
                }
            },
        );
    let smax = sv.max();
    if smin <= 1e-10 * smax {
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let null = v_t.row(imin);
        let names: Vec<&str> = (0..P)
            .filter(|&j| null[j].abs() > 0.1)
            .map(|j| {
                if j < 5 {
                    REGRESSOR_NAMES[j]
                } else {
                    "intercept"
                }
            })
            .collect();
        return Err(Error::Fit(format!(
            "rank-deficient design: collinear regressors {}",
            names.join(", ")
        )));
    }
    let beta_scaled = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let beta: Vec<f64> = (0..P).map(|j| beta_scaled[j] / norms[j]).collect();

    let fitted = &x * DVector::from_column_slice(&beta);
    let rss: f64 = (&y - fitted).iter().map(|r| r * r).sum();
    let dof = n.saturating_sub(P).max(1) as f64;
    let s2 = rss / dof;
    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::Fit("normal matrix is singular".into()))?;
    let standard_errors: [f64; 6] = std::array::from_fn(|j| (s2 * xtx_inv[(j, j)]).max(0.0).sqrt());

    Ok(NoiseModelCoefficients {
        a: [beta[0], beta[1], beta[2], beta[3], beta[4]],
        b: beta[5],
        fit_residual: (rss / n as f64).sqrt(),
        standard_errors,
        n_observations: n,
    })
}

/// Model prediction of `σ_fb`, Hz.
pub fn predict_sigma_fb(coeffs: &NoiseModelCoefficients, x: &NoiseRegressors) -> Result<f64> {
    let row = x.log_row()?;
    let log_scaled: f64 = row.iter().zip(&coeffs.a).map(|(l, a)| l * a).sum::<f64>() + coeffs.b;
    Ok(10f64.powf(log_scaled) / (x.n_avg as f64).sqrt())
}

/// Reference model behind the bundled characterization dataset.
pub const BUNDLED_MODEL_A: [f64; 5] = [0.9, 0.1, 0.25, 0.15, -0.1];
pub const BUNDLED_MODEL_B: f64 = -3.76;
/// Log₁₀ scatter of the bundled dataset.
pub const BUNDLED_LOG_SIGMA: f64 = 0.05;

/// Noise observations on a 3⁵ grid of regressors, drawn from the model
/// `(a, b)` with Gaussian scatter `log_sigma` in log₁₀ units. `n_avg`
/// cycles through 1, 4, 16.
pub fn synthetic_noise_dataset(
    a: [f64; 5],
    b: f64,
    log_sigma: f64,
    seed: u64,
) -> Result<Vec<NoiseObservation>> {
    let scatter =
        Normal::new(0.0, log_sigma).map_err(|e| Error::Parameter(format!("log_sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = NoiseModelCoefficients {
        a,
        b,
        fit_residual: 0.0,
        standard_errors: [0.0; 6],
        n_observations: 0,
    };
    let mut out = Vec::with_capacity(243);
    for &rate in &[2e3, 4e3, 8e3] {
        for &s in &[1e14, 1.67e14, 2.5e14] {
            for &fb in &[2e4, 6e4, 1.5e5] {
                for &v in &[0.005, 0.03, 0.1] {
                    for &r in &[0.02, 0.05, 0.1] {
                        let x = NoiseRegressors {
                            f_ramp_rate: rate,
                            slope_s: s,
                            beat_f_b: fb,
                            velocity_v: v,
                            distance_r: r,
                            n_avg: [1, 4, 16][out.len() % 3],
                        };
                        let sigma =
                            predict_sigma_fb(&truth, &x)? * 10f64.powf(scatter.sample(&mut rng));
                        out.push(NoiseObservation::new(x, sigma));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The dataset `fitnoise` falls back to when no observations are given.
pub fn bundled_noise_dataset(seed: u64) -> Vec<NoiseObservation> {
    synthetic_noise_dataset(BUNDLED_MODEL_A, BUNDLED_MODEL_B, BUNDLED_LOG_SIGMA, seed)
        .expect("bundled model parameters are valid")
}

pub fn read_observations_csv(path: &Path) -> Result<Vec<NoiseObservation>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<NoiseObservation>, _> = reader.deserialize().collect();
    Ok(rows?)
}

pub fn write_observations_csv<W: Write>(out: W, observations: &[NoiseObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for obs in observations {
        w.serialize(obs)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::signed_beat_for_slope;
    use approx::assert_relative_eq;

    fn steep_wp() -> WorkingPoint {
        WorkingPoint {
            steep_slope: 2.5e14,
            ratio_rt: 1.0 / 3.0,
            ..WorkingPoint::default()
        }
    }

    #[test]
    fn origin_is_fully_blind() {
        let wp = WorkingPoint::default();
        assert_eq!(blind_count(&wp, &GroundTruth::new(0.0, 0.0)), 4);
    }

    #[test]
    fn far_static_target_is_not_blind() {
        let wp = WorkingPoint::default();
        // Smallest static beat is on the shallow ramps: 2·R·rt·S/c.
        let r = 1.01 * wp.hp_cutoff * SPEED_OF_LIGHT / (2.0 * wp.ratio_rt * wp.steep_slope);
        assert_eq!(blind_count(&wp, &GroundTruth::new(r, 0.0)), 0);
        assert_eq!(blind_count(&wp, &GroundTruth::new(0.98 * r, 0.0)), 2);
    }

    #[test]
    fn zero_line_of_a_ramp_is_blind() {
        let wp = WorkingPoint::default();
        let s = wp.slopes();
        for (i, &slope) in s.iter().enumerate() {
            let r = 0.04;
            let v = -2.0 * r * slope / wp.emitted_frequency;
            let gt = GroundTruth::new(r, v);
            assert!(
                signed_beat_for_slope(&wp, slope, &gt).abs() < 1e-6,
                "ramp {i}"
            );
            assert!(blind_count(&wp, &gt) >= 1);
        }
    }

    #[test]
    fn blind_map_matches_direct_evaluation() {
        let wp = WorkingPoint::default();
        let map = blind_map(&wp, (-0.1, 0.1), (0.0, 0.1), (41, 31)).unwrap();
        assert_eq!(map.v_axis.len(), 41);
        assert_eq!(map.r_axis.len(), 31);
        for (ir, &r) in map.r_axis.iter().enumerate() {
            for (iv, &v) in map.v_axis.iter().enumerate() {
                let direct = wp
                    .slopes()
                    .iter()
                    .filter(|&&s| {
                        ((2.0 * r * s + wp.emitted_frequency * v) / SPEED_OF_LIGHT).abs()
                            < wp.hp_cutoff
                    })
                    .count() as u8;
                assert_eq!(map.count(iv, ir), direct);
                assert!(map.count(iv, ir) <= 4);
            }
        }
        assert!(map.v_axis.windows(2).all(|w| w[1] > w[0]));
        assert!(blind_map(&wp, (0.1, -0.1), (0.0, 0.1), (4, 4)).is_err());
        assert!(blind_map(&wp, (-0.1, 0.1), (0.0, 0.1), (1, 4)).is_err());
    }

    #[test]
    fn worst_count_agrees_with_dense_velocity_scan() {
        let wp = steep_wp();
        for r in [0.0, 0.004, 0.008, 0.012, 0.015, 0.02, 0.05] {
            let dense = (0..=20_000)
                .map(|i| -0.1 + 0.2 * i as f64 / 20_000.0)
                .map(|v| blind_count(&wp, &GroundTruth::new(r, v)))
                .max()
                .unwrap();
            assert_eq!(worst_blind_count(&wp, r, 0.1), dense, "r = {r}");
        }
    }

    #[test]
    fn zero_cutoff_needs_no_distance() {
        let wp = WorkingPoint {
            hp_cutoff: 0.0,
            ..WorkingPoint::default()
        };
        assert_eq!(min_reliable_distance(&wp, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn min_distance_sits_on_the_pairwise_bound() {
        let wp = steep_wp();
        let d = min_reliable_distance(&wp, 0.1).unwrap();
        let bound = pairwise_overlap_bound(&wp);
        assert!((d - bound).abs() <= 1e-4, "{d} vs {bound}");
        assert!(d > 0.005 && d < 0.02, "{d}");
        assert!(worst_blind_count(&wp, d, 0.1) <= 1);
        assert!(worst_blind_count(&wp, d - 2e-4, 0.1) >= 2);
    }

    #[test]
    fn min_distance_unbounded_signal() {
        let wp = WorkingPoint {
            steep_slope: 1e12,
            ..WorkingPoint::default()
        };
        assert!(matches!(
            min_reliable_distance(&wp, 0.1),
            Err(Error::Unbounded { .. })
        ));
        assert!(min_reliable_distance(&wp, 0.0).is_err());
    }

    #[test]
    fn near_unity_ratio_needs_more_distance_on_the_grid() {
        // Oracle: first distance row of a fine blind map above which every
        // row has at most one blind ramp.
        let grid_min = |wp: &WorkingPoint| {
            let map = blind_map(wp, (-0.1, 0.1), (0.0, 0.1), (401, 1001)).unwrap();
            let bad = (0..map.r_axis.len())
                .rev()
                .find(|&ir| map.blind_count[ir].iter().any(|&c| c >= 2))
                .unwrap();
            map.r_axis[bad + 1]
        };
        let half = WorkingPoint {
            ratio_rt: 0.5,
            ..steep_wp()
        };
        let near_one = WorkingPoint {
            ratio_rt: 0.9,
            ..steep_wp()
        };
        assert!(grid_min(&near_one) > grid_min(&half));
        assert!(
            min_reliable_distance(&near_one, 0.1).unwrap()
                > min_reliable_distance(&half, 0.1).unwrap()
        );
    }

    #[test]
    fn min_distance_monotone_in_cutoff_and_slope() {
        let base = steep_wp();
        let by_cut: Vec<f64> = [5e3, 10e3, 20e3]
            .iter()
            .map(|&hp| {
                min_reliable_distance(
                    &WorkingPoint {
                        hp_cutoff: hp,
                        ..base
                    },
                    0.1,
                )
                .unwrap()
            })
            .collect();
        assert!(by_cut.windows(2).all(|w| w[1] >= w[0]), "{by_cut:?}");
        let by_slope: Vec<f64> = [1.5e14, 2.5e14, 4e14]
            .iter()
            .map(|&s| {
                min_reliable_distance(
                    &WorkingPoint {
                        steep_slope: s,
                        ..base
                    },
                    0.1,
                )
                .unwrap()
            })
            .collect();
        assert!(by_slope.windows(2).all(|w| w[1] <= w[0]), "{by_slope:?}");
    }

    fn grid_observations(a: [f64; 5], b: f64) -> Vec<NoiseObservation> {
        let mut out = Vec::new();
        for (i, &rate) in [1e3, 4e3].iter().enumerate() {
            for &s in &[1e14, 3e14] {
                for &fb in &[2e4, 8e4] {
                    for &v in &[0.01, 0.08] {
                        for &r in &[0.02, 0.06] {
                            let n_avg = [1, 4][(out.len() + i) % 2];
                            let x = NoiseRegressors {
                                f_ramp_rate: rate,
                                slope_s: s,
                                beat_f_b: fb,
                                velocity_v: v,
                                distance_r: r,
                                n_avg,
                            };
                            let coeffs = NoiseModelCoefficients {
                                a,
                                b,
                                fit_residual: 0.0,
                                standard_errors: [0.0; 6],
                                n_observations: 0,
                            };
                            out.push(NoiseObservation::new(
                                x,
                                predict_sigma_fb(&coeffs, &x).unwrap(),
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn noiseless_fit_recovers_generator() {
        let a = [0.3, -0.2, 0.5, 0.1, 0.25];
        let obs = grid_observations(a, 1.7);
        let fit = fit_noise_model(&obs).unwrap();
        for (got, want) in fit.a.iter().zip(a) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert!((fit.b - 1.7).abs() < 1e-9);
        assert!(fit.fit_residual < 1e-9);
        for o in &obs {
            let p = predict_sigma_fb(&fit, &o.regressors()).unwrap();
            assert_relative_eq!(p, o.observed_sigma_fb, max_relative = 1e-9);
        }
    }

    #[test]
    fn prediction_identity_and_averaging_law() {
        let zero = NoiseModelCoefficients::constant(1.0);
        let x = NoiseRegressors {
            f_ramp_rate: 4e3,
            slope_s: 1.67e14,
            beat_f_b: 3e4,
            velocity_v: 0.05,
            distance_r: 0.03,
            n_avg: 1,
        };
        assert_relative_eq!(
            predict_sigma_fb(&zero, &x).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        let c = NoiseModelCoefficients {
            a: [0.2, 0.1, -0.3, 0.4, 0.2],
            ..NoiseModelCoefficients::constant(100.0)
        };
        let one = predict_sigma_fb(&c, &x).unwrap();
        let four = predict_sigma_fb(&c, &NoiseRegressors { n_avg: 4, ..x }).unwrap();
        let sixteen = predict_sigma_fb(&c, &NoiseRegressors { n_avg: 16, ..x }).unwrap();
        assert_relative_eq!(four, one / 2.0, max_relative = 1e-12);
        assert_relative_eq!(sixteen, one / 4.0, max_relative = 1e-12);
        assert!(matches!(
            predict_sigma_fb(
                &c,
                &NoiseRegressors {
                    velocity_v: 0.0,
                    ..x
                }
            ),
            Err(Error::Domain {
                field: "velocity_v",
                ..
            })
        ));
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let mut obs = grid_observations([0.0; 5], 0.0);
        assert!(fit_noise_model(&obs[..11]).is_err());
        obs[3].distance_r = -1.0;
        assert!(matches!(fit_noise_model(&obs), Err(Error::Domain { .. })));
    }

    #[test]
    fn fit_reports_collinear_regressors() {
        // Slope tied to ramp rate, as when the excursion is held fixed.
        let mut obs = grid_observations([0.1, 0.1, 0.1, 0.1, 0.1], 0.0);
        for o in &mut obs {
            o.slope_s = 1e10 * o.f_ramp_rate;
        }
        let err = fit_noise_model(&obs).unwrap_err().to_string();
        assert!(
            err.contains("f_ramp_rate") && err.contains("slope_s"),
            "{err}"
        );
        for o in &mut obs {
            o.distance_r = 0.03;
        }
        let err = fit_noise_model(&obs).unwrap_err().to_string();
        assert!(err.contains("distance_r"), "{err}");
    }

    #[test]
    fn observation_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let obs = grid_observations([0.2, 0.0, 0.1, 0.0, 0.3], -1.0);
        write_observations_csv(std::fs::File::create(&path).unwrap(), &obs).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with(
            "f_ramp_rate,slope_s,beat_f_b,velocity_v,distance_r,n_avg,observed_sigma_fb\n"
        ));
        assert_eq!(read_observations_csv(&path).unwrap(), obs);
    }

    #[test]
    fn blind_map_exports() {
        let wp = WorkingPoint::default();
        let map = blind_map(&wp, (-0.1, 0.1), (0.0, 0.1), (3, 2)).unwrap();
        let mut long = Vec::new();
        map.write_csv(&mut long).unwrap();
        let long = String::from_utf8(long).unwrap();
        assert_eq!(long.lines().count(), 1 + 6);
        assert!(long.starts_with("v_mps,r_m,blind_count\n-0.1,0.0,"));
        let mut grid = Vec::new();
        map.write_grid(&mut grid).unwrap();
        let grid = String::from_utf8(grid).unwrap();
        assert_eq!(grid.lines().count(), 3);
    }
}
