// Gaussian fit vs weighted average on a tone swept across one FFT bin.
//
// $ cargo run --example peak_interpolation

use lfi_fmcw::modulation::WorkingPoint;
use lfi_fmcw::peaks::{InterpolationMethod, PeakDetector};
use lfi_fmcw::simulator::synthesize_tone;
use lfi_fmcw::spectral::frame_spectrum;

fn main() -> lfi_fmcw::Result<()> {
    let wp = WorkingPoint::default();
    let df = wp.sampling_rate / 2048.0;
    let gauss = PeakDetector {
        method: InterpolationMethod::Gaussian,
        ..PeakDetector::default()
    };
    let wavg = PeakDetector::default();
    println!("offset  gaussian  weighted (error in bins)");
    for k in 0..8 {
        let f = (40.0 + k as f64 / 8.0) * df;
        let spec = frame_spectrum(&synthesize_tone(&wp, f, 1.0, 0.05, k)?, &wp, 2048)?;
        let g = gauss.detect(&spec)?;
        let w = wavg.detect(&spec)?;
        println!(
            "{:5.3}  {:+8.4}  {:+8.4}",
            k as f64 / 8.0,
            (g.beat_frequency - f) / df,
            (w.beat_frequency - f) / df
        );
    }
    Ok(())
}
