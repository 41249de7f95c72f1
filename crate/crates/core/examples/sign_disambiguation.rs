// All eight sign assignments for three beat magnitudes, scored by cluster spread.
//
// $ cargo run --example sign_disambiguation

use lfi_fmcw::modulation::WorkingPoint;
use lfi_fmcw::simulator::{cycle_beats, GroundTruth};
use lfi_fmcw::solver::{enumerate_signs, SolverConfig};

fn main() -> lfi_fmcw::Result<()> {
    let wp = WorkingPoint::default();
    let gt = GroundTruth::new(0.035, -0.06);
    let f = cycle_beats(&wp, &gt);
    let s = wp.slopes();
    println!(
        "truth R = {} m, v = {} m/s, signed beats {:?}",
        gt.distance_r,
        gt.velocity_v,
        f.map(|x| x.round())
    );
    let mut cands = enumerate_signs(
        [f[0].abs(), f[1].abs(), f[2].abs()],
        [s[0], s[1], s[2]],
        wp.emitted_frequency,
        &SolverConfig::default(),
    )?;
    cands.sort_by(|a, b| a.spread.total_cmp(&b.spread));
    for c in &cands {
        println!(
            "{:?}  mean R {:+.4} m  mean v {:+.4} m/s  spread {:.3e}",
            c.signs, c.mean_r, c.mean_v, c.spread
        );
    }
    Ok(())
}
