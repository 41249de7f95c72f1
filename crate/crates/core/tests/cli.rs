use std::fs;
use std::path::Path;
use std::process::Command;

use lfi_fmcw::analysis::NoiseModelCoefficients;
use lfi_fmcw::modulation::WorkingPoint;
use lfi_fmcw::spectral::CalibrationSet;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lfi-fmcw"))
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_calibrate_process_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(
        d,
        &[
            "--seed",
            "7",
            "synth",
            "--cycles",
            "8",
            "--distance",
            "0.06",
            "--velocity",
            "-0.01",
            "--noise",
            "0.1",
            "--out",
            "rec.f32",
        ],
    );
    assert!(d.join("rec.f32.json").exists());
    assert!(d.join("rec.f32.manifest.json").exists());
    assert_eq!(fs::metadata(d.join("rec.f32")).unwrap().len(), 8 * 2000 * 4);

    run_ok(
        d,
        &[
            "--seed",
            "8",
            "calibrate",
            "--cycles",
            "32",
            "--noise",
            "0.1",
            "--out",
            "cal.json",
        ],
    );
    CalibrationSet::load(&d.join("cal.json"), &WorkingPoint::default(), 2048).unwrap();

    run_ok(
        d,
        &[
            "process",
            "--recording",
            "rec.f32",
            "--calibration",
            "cal.json",
            "--out",
            "out.csv",
        ],
    );
    let text = fs::read_to_string(d.join("out.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[2], "R_m");
    assert_eq!(&header[6], "status");
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        assert_eq!(&row[6], "ok");
        let r: f64 = row[2].parse().unwrap();
        let v: f64 = row[3].parse().unwrap();
        assert!((r - 0.06).abs() < 0.005 * 0.06, "{r}");
        assert!((v + 0.01).abs() < 1e-3, "{v}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out.csv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["records"], 8);
    assert_eq!(manifest["command"], "process");
}

#[test]
fn jsonl_process_and_noise_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run_ok(
        d,
        &[
            "--seed",
            "3",
            "--format",
            "jsonl",
            "fitnoise",
            "--model",
            "model.json",
            "--out",
            "coef.jsonl",
        ],
    );
    NoiseModelCoefficients::load(&d.join("model.json")).unwrap();
    let stdout = run_ok(
        d,
        &[
            "--format",
            "jsonl",
            "process",
            "--cycles",
            "3",
            "--distance",
            "0.05",
            "--velocity",
            "-0.01",
            "--noise-model",
            "model.json",
        ],
    );
    let lines: Vec<serde_json::Value> = stdout
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert!(l["measurement"]["sigma_r"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn config_file_drives_the_working_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("steep.cfg"),
        "# steeper modulation\nsteep_slope_hz_per_s = 2.5e14\nratio_rt = 0.3333333333333333\n",
    )
    .unwrap();
    let out = run_ok(d, &["--config", "steep.cfg", "mindist"]);
    let last = out.lines().nth(1).unwrap();
    let d_min: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(d_min > 0.005 && d_min < 0.02, "{d_min}");

    fs::write(d.join("bad.cfg"), "steep_slope = 2.5e14\n").unwrap();
    let bad = bin()
        .current_dir(d)
        .args(["--config", "bad.cfg", "mindist"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("steep_slope"));
}

#[test]
fn usage_and_runtime_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let unknown = bin()
        .current_dir(d)
        .args(["process", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(unknown.status.code(), Some(2));
    let missing = bin()
        .current_dir(d)
        .args(["process", "--recording", "nope.f32"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let no_out = bin().current_dir(d).args(["synth"]).output().unwrap();
    assert_eq!(no_out.status.code(), Some(2));
    // A failed run must not leave a partial output behind.
    assert!(!d.join("x.csv").exists());
    let failed = bin()
        .current_dir(d)
        .args(["process", "--recording", "nope.f32", "--out", "x.csv"])
        .output()
        .unwrap();
    assert!(!failed.status.success());
    assert!(!d.join("x.csv").exists());
}

#[test]
fn blindmap_grid_and_long_form_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let long = run_ok(d, &["blindmap", "--n-v", "5", "--n-r", "4"]);
    let grid = run_ok(d, &["blindmap", "--n-v", "5", "--n-r", "4", "--grid"]);
    let cells: Vec<u8> = long
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let from_grid: Vec<u8> = grid
        .lines()
        .skip(1)
        .flat_map(|l| {
            l.split(',')
                .skip(1)
                .map(|c| c.parse::<u8>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(cells.len(), 20);
    assert_eq!(cells, from_grid);
}

#[test]
fn library_entry_point_parses_like_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let out = out.to_str().unwrap();
    assert!(lfi_fmcw::cli::run(["lfi-fmcw", "mindist", "--v-max", "0.05", "--out", out]).is_ok());
    assert!(fs::read_to_string(out).unwrap().starts_with("v_max_mps,"));
    assert!(lfi_fmcw::cli::run(["lfi-fmcw", "frobnicate"]).is_err());
}
