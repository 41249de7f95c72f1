// Minimum reliable distance against the shallow/steep slope ratio.
//
// $ cargo run --example min_distance

use lfi_fmcw::analysis::{min_reliable_distance, pairwise_overlap_bound};
use lfi_fmcw::modulation::WorkingPoint;

fn main() -> lfi_fmcw::Result<()> {
    for slope in [1.67e14, 2.5e14] {
        println!("S = {slope:.2e} Hz/s");
        for rt in [0.2, 0.25, 0.3, 1.0 / 3.0, 0.4, 0.5, 0.6] {
            let wp = WorkingPoint {
                steep_slope: slope,
                ratio_rt: rt,
                ..WorkingPoint::default()
            };
            let d = min_reliable_distance(&wp, 0.1)?;
            println!(
                "  rt {rt:.3}  R_min {:5.2} cm  (closed-form bound {:5.2} cm)",
                d * 100.0,
                pairwise_overlap_bound(&wp) * 100.0
            );
        }
    }
    Ok(())
}
