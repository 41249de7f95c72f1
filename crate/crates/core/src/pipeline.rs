//! End-to-end processing of a stream of modulation cycles.
//!
//! ```text
//! cycle ─► slice ─► window+FFT ─► sliding average ─► subtract/floor ─► peak ─► solve
//!            (×4 ramps)                                                      │
//!                                                                     CycleRecord
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{predict_sigma_fb, NoiseModelCoefficients, NoiseRegressors};
use crate::config::{self, KeyValues};
use crate::error::{Error, Result};
use crate::modulation::{WorkingPoint, RAMPS_PER_CYCLE};
use crate::peaks::{
    InterpolationMethod, PeakDetector, PeakEstimate, DEFAULT_INTERP_WINDOW, DEFAULT_VALIDITY_KAPPA,
};
use crate::simulator::{
    read_sidecar, synthesize_cycle, RecordingReader, RecordingSidecar, TargetScene,
};
use crate::solver::{
    disambiguate, Measurement, MeasurementStatus, SolverConfig, DEFAULT_R_REF, DEFAULT_V_REF,
};
use crate::spectral::{
    slice_cycle, subtract_floor, CalibrationSet, SpectrumAnalyzer, SpectrumHistory,
    DEFAULT_FFT_BINS,
};

/// Noise-model inputs are clamped to this velocity so that `log v` stays finite.
const MIN_MODEL_VELOCITY: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub working_point: WorkingPoint,
    pub fft_bins: usize,
    pub interp_window: usize,
    pub interp_method: InterpolationMethod,
    pub n_avg: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Samples to skip at the start of a stream to align it with the modulation.
    pub sync_offset: usize,
    pub validity_kappa: f64,
    pub solver: SolverConfig,
    /// Beat-noise model used to attach `σ_R`/`σ_v`; NaN sigmas without it.
    #[serde(default)]
    pub noise_model: Option<NoiseModelCoefficients>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            working_point: WorkingPoint::default(),
            fft_bins: DEFAULT_FFT_BINS,
            interp_window: DEFAULT_INTERP_WINDOW,
            interp_method: InterpolationMethod::WeightedAverage,
            n_avg: 1,
            alpha: 1.0,
            beta: 0.0,
            sync_offset: 0,
            validity_kappa: DEFAULT_VALIDITY_KAPPA,
            solver: SolverConfig::default(),
            noise_model: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.working_point.validate()?;
        if self.n_avg == 0 {
            return Err(Error::Parameter("n_avg must be >= 1".into()));
        }
        if self.interp_window.is_multiple_of(2) {
            return Err(Error::Parameter("interp_window must be odd".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Parameter("alpha and beta must be >= 0".into()));
        }
        if !(self.solver.r_ref > 0.0 && self.solver.v_ref > 0.0) {
            return Err(Error::Parameter(
                "cluster reference scales must be > 0".into(),
            ));
        }
        if !(self.validity_kappa >= 0.0) {
            return Err(Error::Parameter("validity_kappa must be >= 0".into()));
        }
        Ok(())
    }

    pub fn detector(&self) -> PeakDetector {
        PeakDetector {
            method: self.interp_method,
            window: self.interp_window,
            kappa: self.validity_kappa,
            ..PeakDetector::default()
        }
    }

    /// Reads working-point and pipeline keys; unknown keys are rejected.
    /// `noise_model` is not part of the flat config.
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let working_point = WorkingPoint::take_from(&mut kv)?;
        let d = PipelineConfig::default();
        let cfg = PipelineConfig {
            working_point,
            fft_bins: kv.take("fft_bins")?.unwrap_or(d.fft_bins),
            interp_window: kv.take("interp_window")?.unwrap_or(d.interp_window),
            interp_method: match kv.take::<String>("interp_method")? {
                Some(s) => s.parse()?,
                None => d.interp_method,
            },
            n_avg: kv.take("n_avg")?.unwrap_or(d.n_avg),
            alpha: kv.take("alpha")?.unwrap_or(d.alpha),
            beta: kv.take("beta")?.unwrap_or(d.beta),
            sync_offset: kv.take("sync_offset_samples")?.unwrap_or(d.sync_offset),
            validity_kappa: kv.take("validity_kappa")?.unwrap_or(d.validity_kappa),
            solver: SolverConfig {
                r_ref: kv.take("cluster_r_ref_m")?.unwrap_or(DEFAULT_R_REF),
                v_ref: kv.take("cluster_v_ref_mps")?.unwrap_or(DEFAULT_V_REF),
            },
            noise_model: None,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        Self::from_key_values(KeyValues::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::load(path)?)
    }

    pub fn to_config_string(&self) -> String {
        let mut pairs = self.working_point.config_pairs();
        pairs.extend([
            ("fft_bins", self.fft_bins.to_string()),
            ("interp_window", self.interp_window.to_string()),
            ("interp_method", self.interp_method.to_string()),
            ("n_avg", self.n_avg.to_string()),
            ("alpha", format!("{:?}", self.alpha)),
            ("beta", format!("{:?}", self.beta)),
            ("sync_offset_samples", self.sync_offset.to_string()),
            ("validity_kappa", format!("{:?}", self.validity_kappa)),
            ("cluster_r_ref_m", format!("{:?}", self.solver.r_ref)),
            ("cluster_v_ref_mps", format!("{:?}", self.solver.v_ref)),
        ]);
        config::render(&pairs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle_index: u64,
    /// Start time of the cycle, s.
    pub timestamp: f64,
    pub peaks: [PeakEstimate; RAMPS_PER_CYCLE],
    pub measurement: Measurement,
    /// The averaging window was not yet full.
    pub warmup: bool,
}

impl CycleRecord {
    /// `ok`, `degraded`, `invalid` or `warmup`.
    pub fn status_label(&self) -> &'static str {
        if self.warmup && self.measurement.status != MeasurementStatus::Invalid {
            "warmup"
        } else {
            self.measurement.status.as_str()
        }
    }
}

pub const RECORD_CSV_HEADER: [&str; 16] = [
    "cycle",
    "t_s",
    "R_m",
    "v_mps",
    "sigma_R_m",
    "sigma_v_mps",
    "status",
    "spread",
    "f_b0_hz",
    "f_b1_hz",
    "f_b2_hz",
    "f_b3_hz",
    "intensity0",
    "intensity1",
    "intensity2",
    "intensity3",
];

/// Writes records as CSV with [`RECORD_CSV_HEADER`].
pub struct RecordCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordCsvWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(RECORD_CSV_HEADER)?;
        Ok(RecordCsvWriter { inner })
    }

    pub fn write(&mut self, rec: &CycleRecord) -> Result<()> {
        let m = &rec.measurement;
        let mut row = vec![
            rec.cycle_index.to_string(),
            format!("{:?}", rec.timestamp),
            format!("{:?}", m.distance_r),
            format!("{:?}", m.velocity_v),
            format!("{:?}", m.sigma_r),
            format!("{:?}", m.sigma_v),
            rec.status_label().to_string(),
            format!("{:?}", m.cluster_spread),
        ];
        row.extend(rec.peaks.iter().map(|p| format!("{:?}", p.beat_frequency)));
        row.extend(rec.peaks.iter().map(|p| format!("{:?}", p.intensity)));
        self.inner.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(csv::Error::from)?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Framing(format!("csv flush failed: {e}")))
    }
}

/// One JSON object per line.
pub fn write_record_jsonl<W: Write>(out: &mut W, rec: &CycleRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, rec)?;
    out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))
}

/// Stateful processor for one sensor stream.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    calibration: CalibrationSet,
    analyzer: SpectrumAnalyzer,
    detector: PeakDetector,
    histories: [SpectrumHistory; RAMPS_PER_CYCLE],
    next_cycle: u64,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, calibration: CalibrationSet) -> Result<Self> {
        cfg.validate()?;
        calibration.check_compatible(&cfg.working_point, cfg.fft_bins)?;
        let analyzer = SpectrumAnalyzer::for_working_point(&cfg.working_point, cfg.fft_bins)?;
        let n_avg = cfg.n_avg;
        Ok(Pipeline {
            detector: cfg.detector(),
            cfg,
            calibration,
            analyzer,
            histories: std::array::from_fn(|_| SpectrumHistory::new(n_avg)),
            next_cycle: 0,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Clears the averaging windows and the cycle counter.
    pub fn reset(&mut self) {
        self.histories.iter_mut().for_each(SpectrumHistory::clear);
        self.next_cycle = 0;
    }

    /// Processes one cycle of ADC samples and advances the averaging state.
    pub fn process_cycle(&mut self, samples: &[f64]) -> Result<CycleRecord> {
        let wp = self.cfg.working_point;
        let frames = slice_cycle(samples, &wp)?;
        let mut peaks = [PeakEstimate::invalid(0, self.cfg.interp_method); RAMPS_PER_CYCLE];
        let mut warmup = false;
        for (i, frame) in frames.iter().enumerate() {
            let spectrum = self.analyzer.spectrum(i, frame)?;
            let averaged = self.histories[i].push(spectrum)?;
            warmup |= self.histories[i].warming_up();
            let cleaned = subtract_floor(
                &averaged,
                &self.calibration.profiles[i],
                self.cfg.alpha,
                self.cfg.beta,
            )?;
            peaks[i] = self.detector.detect(&cleaned)?;
        }
        let mut measurement = disambiguate(&peaks, &wp, &self.cfg.solver)?;
        if let Some(model) = &self.cfg.noise_model {
            if measurement.is_valid() {
                let sigmas = self.beat_sigmas(model, &peaks, &measurement);
                measurement.attach_uncertainty(&wp, &sigmas)?;
            }
        }
        let cycle_index = self.next_cycle;
        self.next_cycle += 1;
        Ok(CycleRecord {
            cycle_index,
            timestamp: cycle_index as f64 * wp.cycle_duration(),
            peaks,
            measurement,
            warmup,
        })
    }

    fn beat_sigmas(
        &self,
        model: &NoiseModelCoefficients,
        peaks: &[PeakEstimate; RAMPS_PER_CYCLE],
        m: &Measurement,
    ) -> [f64; RAMPS_PER_CYCLE] {
        let wp = &self.cfg.working_point;
        std::array::from_fn(|i| {
            let x = NoiseRegressors {
                f_ramp_rate: wp.ramp_rate(),
                slope_s: wp.steep_slope,
                beat_f_b: peaks[i].beat_frequency,
                velocity_v: m.velocity_v.abs().max(MIN_MODEL_VELOCITY),
                distance_r: m.distance_r,
                n_avg: self.cfg.n_avg as u32,
            };
            predict_sigma_fb(model, &x).unwrap_or(f64::NAN)
        })
    }
}

/// Re-chunks a sample stream into cycles after dropping a leading offset.
struct Reframer<I> {
    inner: I,
    cycle_len: usize,
    skip: usize,
    buf: Vec<f64>,
}

impl<I> Iterator for Reframer<I>
where
    I: Iterator<Item = Result<Vec<f64>>>,
{
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.buf.len() < self.cycle_len {
            match self.inner.next()? {
                Err(e) => return Some(Err(e)),
                Ok(chunk) => {
                    let drop = self.skip.min(chunk.len());
                    self.skip -= drop;
                    self.buf.extend_from_slice(&chunk[drop..]);
                }
            }
        }
        let rest = self.buf.split_off(self.cycle_len);
        Some(Ok(std::mem::replace(&mut self.buf, rest)))
    }
}

/// Runs the pipeline over a cycle source. Trailing samples that do not
/// fill a whole cycle are dropped.
pub fn run_stream<'a, I>(
    source: I,
    pipeline: &'a mut Pipeline,
) -> impl Iterator<Item = Result<CycleRecord>> + 'a
where
    I: IntoIterator<Item = Result<Vec<f64>>>,
    I::IntoIter: 'a,
{
    let cycle_len = pipeline.cfg.working_point.samples_per_cycle();
    let skip = pipeline.cfg.sync_offset;
    let cycles: Box<dyn Iterator<Item = Result<Vec<f64>>> + 'a> = if skip == 0 {
        Box::new(source.into_iter())
    } else {
        Box::new(Reframer {
            inner: source.into_iter(),
            cycle_len,
            skip,
            buf: Vec::new(),
        })
    };
    cycles.map(move |c| c.and_then(|samples| pipeline.process_cycle(&samples)))
}

/// Seeded simulator-backed cycle source.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    wp: WorkingPoint,
    scene: TargetScene,
    seed: u64,
    next: u64,
    end: u64,
}

impl SyntheticSource {
    pub fn new(wp: WorkingPoint, scene: TargetScene, seed: u64, n_cycles: u64) -> Self {
        SyntheticSource {
            wp,
            scene,
            seed,
            next: 0,
            end: n_cycles,
        }
    }

    /// Starts at a later cycle index; used to draw independent windows.
    pub fn starting_at(mut self, first_cycle: u64) -> Self {
        self.end += first_cycle - self.next;
        self.next = first_cycle;
        self
    }

    pub fn sidecar(&self) -> Result<RecordingSidecar> {
        Ok(RecordingSidecar {
            format_version: crate::simulator::RECORDING_FORMAT_VERSION,
            working_point: self.wp,
            ramps: crate::modulation::build_cycle(&self.wp)?,
            samples_per_cycle: self.wp.samples_per_cycle(),
            n_cycles: (self.end - self.next) as usize,
            seed: self.seed,
            scene: self.scene,
        })
    }
}

impl Iterator for SyntheticSource {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let c = self.next;
        self.next += 1;
        Some(synthesize_cycle(&self.wp, &self.scene, self.seed, c))
    }
}

/// Cycles replayed from a raw `f32` recording and its sidecar.
pub struct ReplaySource {
    reader: RecordingReader,
    pub sidecar: RecordingSidecar,
}

impl ReplaySource {
    pub fn open(raw_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let sidecar = read_sidecar(sidecar_path)?;
        let reader = RecordingReader::open(raw_path, sidecar.samples_per_cycle)?;
        Ok(ReplaySource { reader, sidecar })
    }
}

impl Iterator for ReplaySource {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.reader.next_cycle().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{GroundTruth, TargetScene};

    fn pipeline(n_avg: usize) -> Pipeline {
        let cfg = PipelineConfig {
            n_avg,
            ..PipelineConfig::default()
        };
        let cal = CalibrationSet::zeros(&cfg.working_point, cfg.fft_bins);
        Pipeline::new(cfg, cal).unwrap()
    }

    fn clean_cycle(gt: GroundTruth) -> Vec<f64> {
        synthesize_cycle(
            &WorkingPoint::default(),
            &TargetScene::target(gt, 1.0, 0.0),
            1,
            0,
        )
        .unwrap()
    }

    #[test]
    fn clean_cycle_recovers_target() {
        let mut p = pipeline(1);
        let rec = p
            .process_cycle(&clean_cycle(GroundTruth::new(0.045, -0.03)))
            .unwrap();
        let m = &rec.measurement;
        assert_eq!(m.status, MeasurementStatus::Ok);
        assert!((m.distance_r - 0.045).abs() < 0.005 * 0.045, "{m:?}");
        assert!((m.velocity_v + 0.03).abs() < 5e-4, "{m:?}");
        assert!(!rec.warmup);
        assert_eq!(rec.status_label(), "ok");
    }

    #[test]
    fn pure_noise_is_invalid() {
        let wp = WorkingPoint::default();
        let cal = CalibrationSet::from_cycles(
            SyntheticSource::new(wp, TargetScene::empty(1.0), 9, 64).map(|c| c.unwrap()),
            &wp,
            DEFAULT_FFT_BINS,
        )
        .unwrap();
        let mut p = Pipeline::new(PipelineConfig::default(), cal).unwrap();
        for c in SyntheticSource::new(wp, TargetScene::empty(1.0), 10, 20) {
            let rec = p.process_cycle(&c.unwrap()).unwrap();
            assert_eq!(rec.measurement.status, MeasurementStatus::Invalid);
        }
    }

    #[test]
    fn repeated_cycle_averages_to_itself() {
        let cycle = clean_cycle(GroundTruth::new(0.03, 0.02));
        let one = pipeline(1).process_cycle(&cycle).unwrap();
        let mut p2 = pipeline(2);
        let first = p2.process_cycle(&cycle).unwrap();
        assert!(first.warmup);
        assert_eq!(first.status_label(), "warmup");
        let second = p2.process_cycle(&cycle).unwrap();
        assert!(!second.warmup);
        assert_eq!(second.peaks, one.peaks);
        assert_eq!(second.measurement, one.measurement);
    }

    #[test]
    fn state_snapshot_reproduces_record() {
        let mut p = pipeline(4);
        for c in 0..3 {
            p.process_cycle(
                &synthesize_cycle(
                    &WorkingPoint::default(),
                    &TargetScene::target(GroundTruth::new(0.05, 0.01), 1.0, 0.3),
                    2,
                    c,
                )
                .unwrap(),
            )
            .unwrap();
        }
        let next = clean_cycle(GroundTruth::new(0.05, 0.01));
        let mut snapshot = p.clone();
        assert_eq!(
            p.process_cycle(&next).unwrap(),
            snapshot.process_cycle(&next).unwrap()
        );
    }

    #[test]
    fn framing_errors_propagate() {
        let mut p = pipeline(1);
        assert!(matches!(
            p.process_cycle(&[0.0; 17]),
            Err(Error::Framing(_))
        ));
    }

    #[test]
    fn mismatched_calibration_is_refused() {
        let cfg = PipelineConfig::default();
        let cal = CalibrationSet::zeros(&cfg.working_point, 1024);
        assert!(Pipeline::new(cfg, cal).is_err());
    }

    #[test]
    fn sync_offset_realigns_stream() {
        let wp = WorkingPoint::default();
        let scene = TargetScene::target(GroundTruth::new(0.03, 0.04), 1.0, 0.0);
        let cycles: Vec<Vec<f64>> = (0..3)
            .map(|c| synthesize_cycle(&wp, &scene, 4, c).unwrap())
            .collect();
        let offset = 123;
        // Prefix garbage, then shift every cycle boundary by `offset`.
        let mut stream = vec![9.0; offset];
        stream.extend(cycles.concat());
        let chunks: Vec<Result<Vec<f64>>> = stream
            .chunks(wp.samples_per_cycle())
            .map(|c| Ok(c.to_vec()))
            .collect();
        let mut aligned = Pipeline::new(
            PipelineConfig {
                sync_offset: offset,
                ..PipelineConfig::default()
            },
            CalibrationSet::zeros(&wp, DEFAULT_FFT_BINS),
        )
        .unwrap();
        let got: Vec<CycleRecord> = run_stream(chunks, &mut aligned)
            .collect::<Result<_>>()
            .unwrap();
        let mut plain = pipeline(1);
        let want: Vec<CycleRecord> = run_stream(cycles.into_iter().map(Ok), &mut plain)
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = PipelineConfig {
            n_avg: 4,
            interp_method: InterpolationMethod::Gaussian,
            beta: 0.5,
            ..PipelineConfig::default()
        };
        let back = PipelineConfig::from_config_str(&cfg.to_config_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(PipelineConfig::from_config_str("n_avgg = 3\n").is_err());
        assert!(PipelineConfig::from_config_str("n_avg = 0\n").is_err());
    }

    #[test]
    fn noise_model_attaches_sigmas() {
        let cfg = PipelineConfig {
            noise_model: Some(NoiseModelCoefficients::constant(200.0)),
            ..PipelineConfig::default()
        };
        let cal = CalibrationSet::zeros(&cfg.working_point, cfg.fft_bins);
        let mut p = Pipeline::new(cfg, cal).unwrap();
        let rec = p
            .process_cycle(&clean_cycle(GroundTruth::new(0.04, 0.02)))
            .unwrap();
        let m = &rec.measurement;
        assert!(m.sigma_r > 0.0 && m.sigma_r.is_finite());
        assert!(m.sigma_v > 0.0 && m.sigma_v.is_finite());
        assert!(pipeline(1)
            .process_cycle(&clean_cycle(GroundTruth::new(0.04, 0.02)))
            .unwrap()
            .measurement
            .sigma_r
            .is_nan());
    }
}
