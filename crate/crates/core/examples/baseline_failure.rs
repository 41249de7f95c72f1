// The up/down triangle formula against the four-ramp solver as the target speeds up.
//
// $ cargo run --example baseline_failure

use lfi_fmcw::modulation::WorkingPoint;
use lfi_fmcw::pipeline::{Pipeline, PipelineConfig};
use lfi_fmcw::simulator::{synthesize_cycle, GroundTruth, TargetScene};
use lfi_fmcw::solver::simplified_measurement;
use lfi_fmcw::spectral::CalibrationSet;

fn main() -> lfi_fmcw::Result<()> {
    let wp = WorkingPoint::default();
    let r = 0.03;
    println!("R = 3 cm    baseline R / v          solver R / v");
    for v in [0.005, 0.02, 0.04, 0.06, 0.08, 0.1] {
        let gt = GroundTruth::new(r, v);
        let mut p = Pipeline::new(PipelineConfig::default(), CalibrationSet::zeros(&wp, 2048))?;
        let rec = p.process_cycle(&synthesize_cycle(
            &wp,
            &TargetScene::target(gt, 1.0, 0.0),
            1,
            0,
        )?)?;
        let (rb, vb) = simplified_measurement(
            rec.peaks[0].beat_frequency,
            rec.peaks[1].beat_frequency,
            &wp,
        );
        let m = rec.measurement;
        println!(
            "v {v:5.3}   {:6.4} m {:+7.4} m/s    {:6.4} m {:+7.4} m/s  {}",
            rb,
            vb,
            m.distance_r,
            m.velocity_v,
            m.status.as_str()
        );
    }
    Ok(())
}
