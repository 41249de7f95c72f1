// Record a synthetic stream to disk and replay it through the pipeline.
//
// $ cargo run --example frame_replay

use lfi_fmcw::modulation::WorkingPoint;
use lfi_fmcw::pipeline::{run_stream, Pipeline, PipelineConfig, ReplaySource, SyntheticSource};
use lfi_fmcw::simulator::{write_recording, GroundTruth, TargetScene};
use lfi_fmcw::spectral::CalibrationSet;

fn main() -> lfi_fmcw::Result<()> {
    let wp = WorkingPoint::default();
    let dir = std::env::temp_dir().join(format!("lfi-fmcw-replay-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| lfi_fmcw::Error::Framing(e.to_string()))?;
    let (raw, side) = (dir.join("run.f32"), dir.join("run.f32.json"));

    let src = SyntheticSource::new(
        wp,
        TargetScene::target(GroundTruth::new(0.07, -0.04), 1.0, 0.3),
        11,
        5,
    );
    let sidecar = src.sidecar()?;
    let cycles: Vec<Vec<f64>> = src.clone().collect::<lfi_fmcw::Result<_>>()?;
    write_recording(&raw, &side, &sidecar, &cycles)?;

    let run =
        |source: Box<dyn Iterator<Item = lfi_fmcw::Result<Vec<f64>>>>| -> lfi_fmcw::Result<Vec<_>> {
            let mut p = Pipeline::new(PipelineConfig::default(), CalibrationSet::zeros(&wp, 2048))?;
            run_stream(source, &mut p).collect()
        };
    let live = run(Box::new(src))?;
    let replay = run(Box::new(ReplaySource::open(&raw, &side)?))?;
    for (a, b) in live.iter().zip(&replay) {
        println!(
            "cycle {}  live R {:.5}  replay R {:.5}",
            a.cycle_index, a.measurement.distance_r, b.measurement.distance_r
        );
    }
    println!("identical: {}", live == replay);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
