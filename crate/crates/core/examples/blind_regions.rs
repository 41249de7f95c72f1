// ASCII map of how many ramps are blind over (v, R).
//
// $ cargo run --example blind_regions

use lfi_fmcw::analysis::blind_map;
use lfi_fmcw::modulation::WorkingPoint;

fn main() -> lfi_fmcw::Result<()> {
    let wp = WorkingPoint::default();
    let map = blind_map(&wp, (-0.1, 0.1), (0.0, 0.06), (61, 25))?;
    println!("rows: R from 6 cm down to 0, columns: v from -0.1 to +0.1 m/s");
    for (ir, r) in map.r_axis.iter().enumerate().rev() {
        let row: String = (0..map.v_axis.len())
            .map(|iv| match map.count(iv, ir) {
                0 => '.',
                1 => '1',
                2 => '2',
                _ => '#',
            })
            .collect();
        println!("{:5.2} cm |{row}|", r * 100.0);
    }
    Ok(())
}
