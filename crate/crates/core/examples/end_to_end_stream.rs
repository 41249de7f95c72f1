// Calibrate on target-free cycles, then track a noisy target with averaging.
//
// $ cargo run --example end_to_end_stream

use lfi_fmcw::modulation::WorkingPoint;
use lfi_fmcw::pipeline::{run_stream, Pipeline, PipelineConfig, SyntheticSource};
use lfi_fmcw::simulator::{GroundTruth, TargetScene};
use lfi_fmcw::spectral::CalibrationSet;

fn main() -> lfi_fmcw::Result<()> {
    let wp = WorkingPoint::default();
    let noise = 0.8;
    let empty: Vec<Vec<f64>> = SyntheticSource::new(wp, TargetScene::empty(noise), 1, 128)
        .collect::<lfi_fmcw::Result<_>>()?;
    let cal = CalibrationSet::from_cycles(empty, &wp, 2048)?;
    let cfg = PipelineConfig {
        n_avg: 8,
        ..PipelineConfig::default()
    };
    let mut pipeline = Pipeline::new(cfg, cal)?;
    let scene = TargetScene::target(GroundTruth::new(0.042, 0.015), 1.0, noise);
    for rec in run_stream(SyntheticSource::new(wp, scene, 2, 16), &mut pipeline) {
        let rec = rec?;
        let m = &rec.measurement;
        println!(
            "{:>2} {:8.4} s  R {:.5} m  v {:+.5} m/s  {}",
            rec.cycle_index,
            rec.timestamp,
            m.distance_r,
            m.velocity_v,
            rec.status_label()
        );
    }
    Ok(())
}
