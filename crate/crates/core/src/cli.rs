//! Command-line front end. The binary is a thin wrapper around [`run`].
//!
//! Tabular outputs go to `--out` (atomically, via a temp file and rename)
//! or stdout. Commands that write files also leave a `<out>.manifest.json`.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::analysis::{
    blind_map, bundled_noise_dataset, fit_noise_model, min_reliable_distance_in,
    pairwise_overlap_bound, read_observations_csv, NoiseModelCoefficients, DEFAULT_SEARCH_MAX_M,
    REGRESSOR_NAMES,
};
use crate::error::{Error, Result};
use crate::pipeline::{
    run_stream, write_record_jsonl, Pipeline, PipelineConfig, RecordCsvWriter, ReplaySource,
    SyntheticSource,
};
use crate::simulator::{write_recording, GroundTruth, TargetScene};
use crate::spectral::CalibrationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Parser)]
#[command(
    name = "lfi-fmcw",
    version,
    about = "Four-ramp FMCW laser feedback interferometry toolkit"
)]
pub struct Cli {
    /// Flat `key = value` config with working-point and pipeline settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a noise-floor calibration from target-free cycles.
    Calibrate {
        /// Raw f32 recording; its sidecar is `<recording>.json`.
        #[arg(long)]
        recording: Option<PathBuf>,
        /// Synthetic target-free cycles when no recording is given.
        #[arg(long, default_value_t = 256)]
        cycles: u64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
    },
    /// Run the processing chain over a recording or a synthetic stream.
    Process {
        #[arg(long)]
        recording: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        noise_model: Option<PathBuf>,
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Number of blind ramps over a velocity/distance grid.
    Blindmap {
        #[arg(long, default_value_t = -0.1, allow_negative_numbers = true)]
        v_min: f64,
        #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
        v_max: f64,
        #[arg(long, default_value_t = 0.0)]
        r_min: f64,
        #[arg(long, default_value_t = 0.1)]
        r_max: f64,
        #[arg(long, default_value_t = 201)]
        n_v: usize,
        #[arg(long, default_value_t = 201)]
        n_r: usize,
        /// Matrix layout instead of one row per cell (csv only).
        #[arg(long)]
        grid: bool,
    },
    /// Smallest distance with at most one blind ramp for every |v| <= v_max.
    Mindist {
        #[arg(long, default_value_t = 0.1)]
        v_max: f64,
        #[arg(long, default_value_t = DEFAULT_SEARCH_MAX_M)]
        search_max: f64,
    },
    /// Fit the log-log beat-noise model.
    Fitnoise {
        /// CSV of observations; the bundled synthetic set when omitted.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Also save the coefficients as JSON for `process --noise-model`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write a synthetic raw recording (`--out`) and its `.json` sidecar.
    Synth {
        #[command(flatten)]
        scene: SceneArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 100)]
    pub cycles: u64,
    /// Target distance, m.
    #[arg(long, default_value_t = 0.05)]
    pub distance: f64,
    /// Target velocity, m/s.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub velocity: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Zero the target in this ramp (0..=3).
    #[arg(long)]
    pub muted_ramp: Option<usize>,
}

impl SceneArgs {
    fn scene(&self) -> Result<TargetScene> {
        if self.muted_ramp.is_some_and(|k| k >= 4) {
            return Err(Error::Parameter("muted_ramp must be in 0..=3".into()));
        }
        Ok(TargetScene {
            muted_ramp: self.muted_ramp,
            ..TargetScene::target(
                GroundTruth::new(self.distance, self.velocity),
                self.amplitude,
                self.noise,
            )
        })
    }
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    format: Format,
    config: String,
    outputs: Vec<String>,
    records: usize,
}

/// Text output that lands at its final path only on [`Output::commit`].
enum Output {
    Stdout(io::Stdout),
    File {
        tmp: tempfile::NamedTempFile,
        path: PathBuf,
    },
}

impl Output {
    fn open(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Output::Stdout(io::stdout())),
            Some(p) => Ok(Output::File {
                tmp: temp_beside(p)?,
                path: p.to_path_buf(),
            }),
        }
    }

    fn commit(self) -> Result<()> {
        match self {
            Output::Stdout(mut s) => s.flush().map_err(|e| Error::io("<stdout>", e)),
            Output::File { mut tmp, path } => {
                tmp.flush().map_err(|e| Error::io(&path, e))?;
                tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
                Ok(())
            }
        }
    }
}

impl Write for Output {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Output::Stdout(s) => s.write(buf),
            Output::File { tmp, .. } => tmp.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Output::Stdout(s) => s.flush(),
            Output::File { tmp, .. } => tmp.flush(),
        }
    }
}

fn temp_beside(path: &Path) -> Result<tempfile::NamedTempFile> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(tmp.path(), e))?;
    }
    Ok(tmp)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut out = Output::open(Some(path))?;
    out.write_all(bytes).map_err(|e| Error::io(path, e))?;
    out.commit()
}

fn sidecar_path(raw: &Path) -> PathBuf {
    let mut s = raw.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

struct Ctx {
    args: Vec<String>,
    seed: u64,
    format: Format,
    out: Option<PathBuf>,
    cfg: PipelineConfig,
}

impl Ctx {
    fn manifest(&self, command: &str, outputs: &[&Path], records: usize) -> Result<()> {
        let Some(out) = &self.out else { return Ok(()) };
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            args: self.args.clone(),
            seed: self.seed,
            format: self.format,
            config: self.cfg.to_config_string(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            records,
        };
        write_atomic(
            &manifest_path(out),
            (serde_json::to_string_pretty(&m)? + "\n").as_bytes(),
        )
    }

    fn require_out(&self, command: &str) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Parameter(format!("{command} needs --out")))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args).map_err(|e| Error::Parameter(e.to_string()))?;
    execute(
        cli,
        args.iter()
            .skip(1)
            .map(|a| a.to_string_lossy().into_owned())
            .collect(),
    )
}

/// Entry point for the binary: 0 on success, 2 on usage or configuration
/// errors, 1 otherwise.
pub fn main_exit() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli, std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parameter(_) | Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn execute(cli: Cli, args: Vec<String>) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let ctx = Ctx {
        args,
        seed: cli.seed,
        format: cli.format,
        out: cli.out,
        cfg,
    };
    match cli.command {
        Command::Calibrate {
            recording,
            cycles,
            noise,
        } => calibrate(&ctx, recording.as_deref(), cycles, noise),
        Command::Process {
            recording,
            calibration,
            noise_model,
            scene,
        } => process(
            &ctx,
            recording.as_deref(),
            calibration.as_deref(),
            noise_model.as_deref(),
            &scene,
        ),
        Command::Blindmap {
            v_min,
            v_max,
            r_min,
            r_max,
            n_v,
            n_r,
            grid,
        } => blindmap(&ctx, (v_min, v_max), (r_min, r_max), (n_v, n_r), grid),
        Command::Mindist { v_max, search_max } => mindist(&ctx, v_max, search_max),
        Command::Fitnoise {
            observations,
            model,
        } => fitnoise(&ctx, observations.as_deref(), model.as_deref()),
        Command::Synth { scene } => synth(&ctx, &scene),
    }
}

fn calibrate(ctx: &Ctx, recording: Option<&Path>, cycles: u64, noise: f64) -> Result<()> {
    let out = ctx.require_out("calibrate")?;
    let wp = ctx.cfg.working_point;
    let bins = ctx.cfg.fft_bins;
    let set = match recording {
        Some(raw) => {
            let src = ReplaySource::open(raw, &sidecar_path(raw))?;
            if src.sidecar.working_point != wp {
                return Err(Error::Calibration(
                    "recording working point differs from the config".into(),
                ));
            }
            let cycles: Vec<Vec<f64>> = src.collect::<Result<_>>()?;
            CalibrationSet::from_cycles(cycles, &wp, bins)?
        }
        None => {
            let cycles: Vec<Vec<f64>> =
                SyntheticSource::new(wp, TargetScene::empty(noise), ctx.seed, cycles)
                    .collect::<Result<_>>()?;
            CalibrationSet::from_cycles(cycles, &wp, bins)?
        }
    };
    let tmp = temp_beside(out)?;
    set.save(tmp.path())?;
    tmp.persist(out).map_err(|e| Error::io(out, e.error))?;
    ctx.manifest("calibrate", &[out], 0)
}

fn process(
    ctx: &Ctx,
    recording: Option<&Path>,
    calibration: Option<&Path>,
    noise_model: Option<&Path>,
    scene: &SceneArgs,
) -> Result<()> {
    let mut cfg = ctx.cfg.clone();
    let wp = cfg.working_point;
    if let Some(p) = noise_model {
        cfg.noise_model = Some(NoiseModelCoefficients::load(p)?);
    }
    let cal = match calibration {
        Some(p) => CalibrationSet::load(p, &wp, cfg.fft_bins)?,
        None => CalibrationSet::zeros(&wp, cfg.fft_bins),
    };
    let source: Box<dyn Iterator<Item = Result<Vec<f64>>>> = match recording {
        Some(raw) => {
            let src = ReplaySource::open(raw, &sidecar_path(raw))?;
            if src.sidecar.working_point != wp {
                return Err(Error::Framing(
                    "recording working point differs from the config".into(),
                ));
            }
            Box::new(src)
        }
        None => Box::new(SyntheticSource::new(
            wp,
            scene.scene()?,
            ctx.seed,
            scene.cycles,
        )),
    };
    let mut pipeline = Pipeline::new(cfg, cal)?;
    let mut out = Output::open(ctx.out.as_deref())?;
    let mut n = 0;
    match ctx.format {
        Format::Csv => {
            let mut w = RecordCsvWriter::new(&mut out)?;
            for rec in run_stream(source, &mut pipeline) {
                w.write(&rec?)?;
                n += 1;
            }
            w.finish()?;
        }
        Format::Jsonl => {
            for rec in run_stream(source, &mut pipeline) {
                write_record_jsonl(&mut out, &rec?)?;
                n += 1;
            }
        }
    }
    out.commit()?;
    let outputs: Vec<&Path> = ctx.out.as_deref().into_iter().collect();
    ctx.manifest("process", &outputs, n)
}

fn blindmap(ctx: &Ctx, v: (f64, f64), r: (f64, f64), n: (usize, usize), grid: bool) -> Result<()> {
    let map = blind_map(&ctx.cfg.working_point, v, r, n)?;
    let mut out = Output::open(ctx.out.as_deref())?;
    match (ctx.format, grid) {
        (Format::Csv, false) => map.write_csv(&mut out)?,
        (Format::Csv, true) => map.write_grid(&mut out)?,
        (Format::Jsonl, _) => {
            for (ir, &rr) in map.r_axis.iter().enumerate() {
                for (iv, &vv) in map.v_axis.iter().enumerate() {
                    let row = json!({"v_mps": vv, "r_m": rr, "blind_count": map.count(iv, ir)});
                    writeln!(out, "{row}").map_err(|e| Error::io("<output>", e))?;
                }
            }
        }
    }
    out.commit()?;
    let outputs: Vec<&Path> = ctx.out.as_deref().into_iter().collect();
    ctx.manifest("blindmap", &outputs, n.0 * n.1)
}

fn mindist(ctx: &Ctx, v_max: f64, search_max: f64) -> Result<()> {
    let wp = &ctx.cfg.working_point;
    let d = min_reliable_distance_in(wp, v_max, search_max)?;
    let bound = pairwise_overlap_bound(wp);
    let mut out = Output::open(ctx.out.as_deref())?;
    let line = match ctx.format {
        Format::Csv => {
            format!("v_max_mps,min_distance_m,pairwise_bound_m\n{v_max:?},{d:?},{bound:?}\n")
        }
        Format::Jsonl => format!(
            "{}\n",
            json!({"v_max_mps": v_max, "min_distance_m": d, "pairwise_bound_m": bound})
        ),
    };
    out.write_all(line.as_bytes())
        .map_err(|e| Error::io("<output>", e))?;
    out.commit()?;
    let outputs: Vec<&Path> = ctx.out.as_deref().into_iter().collect();
    ctx.manifest("mindist", &outputs, 1)
}

fn fitnoise(ctx: &Ctx, observations: Option<&Path>, model: Option<&Path>) -> Result<()> {
    let obs = match observations {
        Some(p) => read_observations_csv(p)?,
        None => bundled_noise_dataset(ctx.seed),
    };
    let coeffs = fit_noise_model(&obs)?;
    let mut out = Output::open(ctx.out.as_deref())?;
    match ctx.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["term", "coefficient", "std_error"])?;
            for (i, name) in REGRESSOR_NAMES.iter().enumerate() {
                w.write_record([
                    name.to_string(),
                    format!("{:?}", coeffs.a[i]),
                    format!("{:?}", coeffs.standard_errors[i]),
                ])?;
            }
            w.write_record([
                "intercept".to_string(),
                format!("{:?}", coeffs.b),
                format!("{:?}", coeffs.standard_errors[5]),
            ])?;
            w.write_record([
                "fit_residual".to_string(),
                format!("{:?}", coeffs.fit_residual),
                String::new(),
            ])?;
            w.flush().map_err(csv::Error::from)?;
        }
        Format::Jsonl => {
            serde_json::to_writer(&mut out, &coeffs)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
    }
    out.commit()?;
    let mut outputs: Vec<&Path> = ctx.out.as_deref().into_iter().collect();
    if let Some(p) = model {
        write_atomic(
            p,
            (serde_json::to_string_pretty(&coeffs)? + "\n").as_bytes(),
        )?;
        outputs.push(p);
    }
    ctx.manifest("fitnoise", &outputs, obs.len())
}

fn synth(ctx: &Ctx, scene: &SceneArgs) -> Result<()> {
    let raw = ctx.require_out("synth")?;
    let src = SyntheticSource::new(
        ctx.cfg.working_point,
        scene.scene()?,
        ctx.seed,
        scene.cycles,
    );
    let sidecar = src.sidecar()?;
    let cycles: Vec<Vec<f64>> = src.collect::<Result<_>>()?;
    let side = sidecar_path(raw);
    let raw_tmp = temp_beside(raw)?;
    let side_tmp = temp_beside(&side)?;
    write_recording(raw_tmp.path(), side_tmp.path(), &sidecar, &cycles)?;
    raw_tmp.persist(raw).map_err(|e| Error::io(raw, e.error))?;
    side_tmp
        .persist(&side)
        .map_err(|e| Error::io(&side, e.error))?;
    ctx.manifest("synth", &[raw, &side], cycles.len())
}
