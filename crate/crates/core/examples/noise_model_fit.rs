// Fit the log-log beat-noise model on the bundled dataset and propagate it.
//
// $ cargo run --example noise_model_fit

use lfi_fmcw::analysis::{
    bundled_noise_dataset, fit_noise_model, predict_sigma_fb, NoiseRegressors, REGRESSOR_NAMES,
};
use lfi_fmcw::modulation::WorkingPoint;
use lfi_fmcw::solver::propagate_noise;

fn main() -> lfi_fmcw::Result<()> {
    let obs = bundled_noise_dataset(0);
    let fit = fit_noise_model(&obs)?;
    println!(
        "{} observations, residual {:.4} (log10)",
        fit.n_observations, fit.fit_residual
    );
    for (k, name) in REGRESSOR_NAMES.iter().enumerate() {
        println!(
            "  {name:<12} {:+.3} ± {:.3}",
            fit.a[k], fit.standard_errors[k]
        );
    }
    println!(
        "  intercept    {:+.3} ± {:.3}",
        fit.b, fit.standard_errors[5]
    );

    let wp = WorkingPoint::default();
    for n_avg in [1, 4, 16] {
        let x = NoiseRegressors {
            f_ramp_rate: wp.ramp_rate(),
            slope_s: wp.steep_slope,
            beat_f_b: 5e4,
            velocity_v: 0.02,
            distance_r: 0.05,
            n_avg,
        };
        let sf = predict_sigma_fb(&fit, &x)?;
        let s = wp.slopes();
        let (sr, sv) = propagate_noise(sf, sf, s[0], s[1], wp.emitted_frequency)?;
        println!(
            "n_avg {n_avg:>2}: sigma_fb {sf:7.1} Hz  sigma_R {:.3} mm  sigma_v {:.3} mm/s",
            sr * 1e3,
            sv * 1e3
        );
    }
    Ok(())
}
