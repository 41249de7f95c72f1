// Four-ramp modulation cycle for the default working point.
//
// $ cargo run --example modulation_cycle

use lfi_fmcw::modulation::{build_cycle, modulation_waveform, WorkingPoint};

fn main() -> lfi_fmcw::Result<()> {
    let wp = WorkingPoint::default();
    wp.validate()?;
    println!(
        "cycle {:.0} us, {:.0} measurements/s, {} samples/ramp",
        wp.cycle_duration() * 1e6,
        wp.measurement_rate(),
        wp.samples_per_ramp()
    );
    for r in build_cycle(&wp)? {
        println!(
            "ramp {}  start {:6.1} us  slope {:+.3e} Hz/s  sweep {:+.2} GHz",
            r.index,
            r.start_time * 1e6,
            r.slope,
            r.slope * r.duration / 1e9
        );
    }
    let wave = modulation_waveform(&wp, 33)?;
    let peak = wave.iter().cloned().fold(f64::MIN, f64::max);
    println!(
        "peak excursion {:.2} GHz, returns to {:.1} Hz",
        peak / 1e9,
        wave.last().unwrap()
    );
    Ok(())
}
