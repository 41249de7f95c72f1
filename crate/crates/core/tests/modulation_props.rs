use lfi_fmcw::modulation::{build_cycle, WorkingPoint};
use proptest::prelude::*;

fn working_point() -> impl Strategy<Value = WorkingPoint> {
    (1e-5f64..1e-2, 1e12f64..1e15, 0.01f64..0.99).prop_map(|(t, s, rt)| WorkingPoint {
        ramp_duration: t,
        steep_slope: s,
        ratio_rt: rt,
        sampling_rate: 2e6,
        ..WorkingPoint::default()
    })
}

proptest! {
    #[test]
    fn signed_area_over_cycle_is_zero(wp in working_point()) {
        let ramps = build_cycle(&wp).unwrap();
        let area: f64 = ramps.iter().map(|r| r.slope * r.duration).sum();
        prop_assert!(area.abs() <= 1e-9 * wp.peak_excursion());
    }

    #[test]
    fn slopes_pairwise_distinct(wp in working_point()) {
        let ramps = build_cycle(&wp).unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                prop_assert!(ramps[i].slope != ramps[j].slope);
            }
        }
    }

    #[test]
    fn ramps_are_contiguous_and_deterministic(wp in working_point()) {
        let a = build_cycle(&wp).unwrap();
        let b = build_cycle(&wp).unwrap();
        prop_assert_eq!(a, b);
        for pair in a.windows(2) {
            let end = pair[0].start_time + pair[0].duration;
            prop_assert!((end - pair[1].start_time).abs() <= 1e-12 * wp.cycle_duration());
        }
    }
}
