// Why slow beats vanish: the front-end high-pass and a beat swept across it.
//
// $ cargo run --example highpass_blindness

use lfi_fmcw::modulation::WorkingPoint;
use lfi_fmcw::simulator::{synthesize_tone, HighPass};
use lfi_fmcw::spectral::frame_spectrum;

fn main() -> lfi_fmcw::Result<()> {
    let wp = WorkingPoint::default();
    let hp = HighPass::new(&wp);
    println!(
        "order-{} Butterworth high-pass at {} Hz",
        2 * hp.sections().len(),
        wp.hp_cutoff
    );
    for f in [2e3, 5e3, 10e3, 20e3, 50e3] {
        let tone = hp.apply(&synthesize_tone(&wp, f, 1.0, 0.0, 0)?);
        let spec = frame_spectrum(&tone, &wp, 2048)?;
        let peak = spec.magnitudes.iter().cloned().fold(0.0, f64::max);
        println!(
            "{:>6.0} Hz  |H| {:6.1} dB  spectral peak {:7.2}",
            f,
            20.0 * hp.magnitude(f).log10(),
            peak
        );
    }
    Ok(())
}
