//! `cdmd` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cdmd::bench::{format_table, run_bench, BenchConfig, BenchMethod};
use cdmd::dmd::{dmd_compressed, dmd_exact, AmplitudeMode, DmdOptions, RankSelection};
use cdmd::frames_io::{
    load_frames, load_mask, save_frame, save_frames, save_mask, save_raw_matrix, split_snapshots, FrameFormat, FrameSequence,
};
use cdmd::pipeline::{evaluate, run_pipeline, sweep_run, Method, PipelineConfig, PipelineOutput, Postfilter, Sparsity};
use cdmd::report::ModelReport;
use cdmd::sensing::{make_sensing, SensingKind};
use cdmd::synth::{make_planted_dmd, render_scene, MovingObject, OscillatingPatch, SceneSpec};
use cdmd::{c64, CdmdError};

#[derive(Parser, Debug)]
#[command(name = "cdmd", version, about = "Compressed dynamic mode decomposition for video background modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a DMD model to a frame sequence and print its report.
    Decompose(DecomposeArgs),
    /// Compute per-batch background frames.
    Background(RunArgs),
    /// Compute foreground masks, optionally scored against ground truth.
    Mask(MaskArgs),
    /// Score a mask directory against a ground-truth mask directory.
    Eval(EvalArgs),
    /// Time exact and compressed DMD on synthetic scenes.
    Bench(BenchArgs),
    /// Write a synthetic video and its ground truth.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
struct Shared {
    /// Frame source: a PGM directory or a raw_matrix file
    #[arg(long)]
    input: PathBuf,
    /// Input format: pgm_dir or raw
    #[arg(long, default_value = "pgm_dir")]
    format: FrameFormat,
    /// exact or compressed
    #[arg(long, default_value = "compressed")]
    method: Method,
    /// gaussian, sparse, spixel or srft
    #[arg(long, default_value = "sparse")]
    sensing: SensingKind,
    /// Number of measurements
    #[arg(long, default_value_t = 1000)]
    p: usize,
    /// Sparse sensing factor s, or auto for n/ln(n)
    #[arg(long = "sparsity-s", default_value = "auto")]
    sparsity_s: String,
    /// Truncation rank: auto or a positive integer
    #[arg(long, default_value = "auto")]
    rank: RankSelection,
    /// Nonzero background amplitudes: a positive integer or cv
    #[arg(long = "K", default_value = "10")]
    k: Sparsity,
    /// Amplitude least squares on full or compressed modes
    #[arg(long, default_value = "full")]
    amplitude: AmplitudeMode,
    /// Background modes satisfy |omega| <= this
    #[arg(long = "omega-tol", default_value_t = 0.01)]
    omega_tol: f64,
    /// Foreground threshold in gray levels
    #[arg(long, default_value_t = 25.0)]
    tau: f64,
    /// none or median3
    #[arg(long, default_value = "none")]
    postfilter: Postfilter,
    /// Frames per batch
    #[arg(long, default_value_t = 200)]
    batch: usize,
    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for batches, or auto for all cores
    #[arg(long, env = "CDMD_THREADS", default_value = "auto")]
    threads: String,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[command(flatten)]
    shared: Shared,
    /// Also write mode real/imaginary parts as raw_matrix files
    #[arg(long)]
    dump_modes: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[command(flatten)]
    shared: Shared,
    /// Ground-truth mask directory
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Comma-separated thresholds to sweep (needs --truth)
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Mask directory to score
    #[arg(long)]
    mask: PathBuf,
    /// Ground-truth mask directory
    #[arg(long)]
    truth: PathBuf,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated WIDTHxHEIGHT list
    #[arg(long, value_delimiter = ',', default_value = "320x240,720x480,1280x720")]
    resolutions: Vec<String>,
    /// Frames per scene
    #[arg(long, default_value_t = 200)]
    frames: usize,
    /// Comma-separated methods: exact, compressed_<sensing>
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "exact,compressed_sparse,compressed_spixel,compressed_gaussian,compressed_srft"
    )]
    methods: Vec<BenchMethod>,
    /// Number of measurements
    #[arg(long, default_value_t = 1000)]
    p: usize,
    /// Repetitions per configuration (median reported)
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Scene and sensing seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print JSON instead of the table
    #[arg(long)]
    json: bool,
    /// Output directory for bench.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Scene description as JSON; overrides the block-scene flags
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    /// Side of the moving block, 0 for none
    #[arg(long, default_value_t = 8)]
    block: usize,
    /// First frame with the block
    #[arg(long, default_value_t = 50)]
    enter: usize,
    /// First frame without the block
    #[arg(long, default_value_t = 150)]
    exit: usize,
    /// Gaussian pixel noise
    #[arg(long, default_value_t = 2.0)]
    noise: f64,
    /// Add an oscillating checkerboard patch of this amplitude
    #[arg(long, default_value_t = 0.0)]
    patch: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Planted DMD eigenvalues instead of a scene: real `r` or polar
    /// `r@theta`, comma separated, conjugates included
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    planted: Vec<String>,
    /// Pixels per frame for planted data
    #[arg(long, default_value_t = 500)]
    n: usize,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(e: &CdmdError) -> u8 {
    match e {
        _ if e.is_numerical() => EXIT_NUMERICAL,
        CdmdError::InvalidArgument(_) => EXIT_USAGE,
        CdmdError::Batch { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Decompose(a) => cmd_decompose(a),
        Command::Background(a) => cmd_background(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type Result<T> = cdmd::Result<T>;

fn usage(msg: impl Into<String>) -> CdmdError {
    CdmdError::InvalidArgument(msg.into())
}

fn config_from(s: &Shared) -> Result<PipelineConfig> {
    let sparsity_s = match s.sparsity_s.as_str() {
        "auto" => None,
        v => Some(v.parse::<f64>().map_err(|_| usage(format!("invalid --sparsity-s `{v}`")))?),
    };
    let threads = match s.threads.as_str() {
        "auto" | "" => None,
        v => Some(v.parse::<usize>().map_err(|_| usage(format!("invalid --threads `{v}`")))?),
    };
    let config = PipelineConfig {
        method: s.method,
        sensing: s.sensing,
        p: s.p,
        sparsity_s,
        seed: s.seed,
        rank: s.rank,
        sparsity: s.k,
        amplitude: s.amplitude,
        omega_tol: s.omega_tol,
        tau: s.tau,
        postfilter: s.postfilter,
        batch_size: s.batch,
        threads,
    };
    config.validate()?;
    Ok(config)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CdmdError::Io { path: dir.to_path_buf(), source: e })
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let path = dir.join(name);
        fs::write(&path, &text).map_err(|e| CdmdError::Io { path, source: e })?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let config = config_from(&a.shared)?;
    let frames = load_frames(&a.shared.input, a.shared.format)?;
    let pair = split_snapshots(&frames)?;
    let options = DmdOptions { rank: config.rank, amplitude: config.amplitude };
    let model = match config.method {
        Method::Exact => dmd_exact(&pair, &options)?,
        Method::Compressed => {
            let n = frames.n_pixels();
            let c = make_sensing(config.sensing, config.p.min(n), n, config.seed, config.sparsity_s)?;
            dmd_compressed(&pair, &c, &options)?
        }
    };
    if a.dump_modes {
        let dir = a.shared.out.as_deref().ok_or_else(|| usage("--dump-modes needs --out"))?;
        ensure_dir(dir)?;
        let phi = &model.modes;
        let re = cdmd::Mat::from_fn(phi.nrows(), phi.ncols(), |i, j| phi[(i, j)].re);
        let im = cdmd::Mat::from_fn(phi.nrows(), phi.ncols(), |i, j| phi[(i, j)].im);
        let (w, h, dt) = (frames.width(), frames.height(), frames.frame_interval());
        save_raw_matrix(re.as_ref(), w, h, dt, &dir.join("modes_re.raw"))?;
        save_raw_matrix(im.as_ref(), w, h, dt, &dir.join("modes_im.raw"))?;
    }
    write_json(&ModelReport::from_model(&model), a.shared.out.as_deref(), "model_report.json")
}

fn run(shared: &Shared) -> Result<(FrameSequence, PipelineConfig)> {
    let config = config_from(shared)?;
    let frames = load_frames(&shared.input, shared.format)?;
    Ok((frames, config))
}

fn write_backgrounds(out: &Path, frames: &FrameSequence, output: &PipelineOutput) -> Result<()> {
    ensure_dir(out)?;
    for b in &output.batches {
        let path = out.join(format!("background_{:03}.pgm", b.report.index));
        save_frame(&b.background.background, frames.width(), frames.height(), &path)?;
    }
    Ok(())
}

fn cmd_background(a: RunArgs) -> Result<()> {
    let (frames, config) = run(&a.shared)?;
    let output = run_pipeline(&frames, &config, None)?;
    if let Some(out) = &a.shared.out {
        write_backgrounds(out, &frames, &output)?;
    }
    write_json(&output.report, a.shared.out.as_deref(), "run_report.json")
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let (frames, config) = run(&a.shared)?;
    let truth = match &a.truth {
        Some(dir) => {
            let (mask, w, h) = load_mask(dir)?;
            if (w, h) != (frames.width(), frames.height()) {
                return Err(CdmdError::Shape(format!(
                    "truth masks are {w}x{h}, frames are {}x{}",
                    frames.width(),
                    frames.height()
                )));
            }
            Some(mask)
        }
        None => None,
    };
    if !a.sweep.is_empty() && truth.is_none() {
        return Err(usage("--sweep needs --truth"));
    }
    let output = run_pipeline(&frames, &config, truth.as_ref())?;
    let mut report = output.report.clone();
    if let (Some(t), false) = (&truth, a.sweep.is_empty()) {
        let sweep = sweep_run(&frames, &output, t, &a.sweep, config.postfilter)?;
        if let Some(m) = report.metrics.as_mut() {
            m.threshold_sweep = Some(sweep.pairs());
        }
    }
    if let Some(out) = &a.shared.out {
        save_mask(&output.mask, frames.width(), frames.height(), &out.join("masks"))?;
        write_backgrounds(out, &frames, &output)?;
    }
    write_json(&report, a.shared.out.as_deref(), "run_report.json")
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (mask, w1, h1) = load_mask(&a.mask)?;
    let (truth, w2, h2) = load_mask(&a.truth)?;
    if (w1, h1) != (w2, h2) {
        return Err(CdmdError::Shape(format!("mask is {w1}x{h1}, truth is {w2}x{h2}")));
    }
    let report = evaluate(&mask, &truth)?;
    write_json(&report, a.out.as_deref(), "eval_report.json")
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s.split_once('x').ok_or_else(|| usage(format!("resolution `{s}` is not WIDTHxHEIGHT")))?;
    match (w.parse(), h.parse()) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(usage(format!("resolution `{s}` is not WIDTHxHEIGHT"))),
    }
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let config = BenchConfig {
        resolutions: a.resolutions.iter().map(|s| parse_resolution(s)).collect::<Result<_>>()?,
        n_frames: a.frames,
        methods: a.methods.clone(),
        p: a.p,
        repetitions: a.reps,
        seed: a.seed,
        ..Default::default()
    };
    let results = run_bench(&config)?;
    let text = serde_json::to_string_pretty(&results).expect("bench results serialize");
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        let path = dir.join("bench.json");
        fs::write(&path, &text).map_err(|e| CdmdError::Io { path, source: e })?;
    }
    if a.json {
        println!("{text}");
    } else {
        print!("{}", format_table(&results));
    }
    Ok(())
}

fn parse_eigenvalue(s: &str) -> Result<c64> {
    let bad = || usage(format!("eigenvalue `{s}` is not `r` or `r@theta`"));
    match s.split_once('@') {
        Some((r, th)) => {
            let r: f64 = r.trim().parse().map_err(|_| bad())?;
            let th: f64 = th.trim().parse().map_err(|_| bad())?;
            Ok(if th == 0.0 { c64::new(r, 0.0) } else { c64::from_polar(r, th) })
        }
        None => Ok(c64::new(s.trim().parse().map_err(|_| bad())?, 0.0)),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    ensure_dir(&a.out)?;
    if !a.planted.is_empty() {
        let lambdas: Vec<c64> = a.planted.iter().map(|s| parse_eigenvalue(s)).collect::<Result<_>>()?;
        let planted = make_planted_dmd(a.n, a.frames, &lambdas, a.seed)?;
        save_frames(&planted.frames, &a.out.join("frames.raw"))?;
        println!("{}", a.out.join("frames.raw").display());
        return Ok(());
    }
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CdmdError::Io { path: path.clone(), source: e })?;
            serde_json::from_str::<SceneSpec>(&text)
                .map_err(|e| CdmdError::Format { path: path.clone(), reason: e.to_string() })?
        }
        None => {
            let mut objects = Vec::new();
            if a.block > 0 {
                if a.exit <= a.enter + 1 || a.block > a.width || a.block > a.height {
                    return Err(usage("block must fit the frame and --exit must exceed --enter + 1"));
                }
                objects.push(MovingObject {
                    width: a.block,
                    height: a.block,
                    x0: 0.0,
                    y0: ((a.height - a.block) / 2) as f64,
                    vx: (a.width - a.block) as f64 / (a.exit - a.enter - 1) as f64,
                    vy: 0.0,
                    intensity: 250.0,
                    start_frame: a.enter,
                    end_frame: a.exit.min(a.frames),
                });
            }
            let mut patches = Vec::new();
            if a.patch > 0.0 {
                let side = (a.width.min(a.height) / 4).max(1);
                patches.push(OscillatingPatch { x: 0, y: 0, width: side, height: side, amplitude: a.patch, period: 20.0 });
            }
            SceneSpec {
                width: a.width,
                height: a.height,
                n_frames: a.frames,
                objects,
                patches,
                noise_sigma: a.noise,
                seed: a.seed,
            }
        }
    };
    let scene = render_scene(&spec)?;
    save_frames(&scene.frames, &a.out.join("frames.raw"))?;
    save_mask(&scene.truth, spec.width, spec.height, &a.out.join("truth"))?;
    save_frame(&scene.background, spec.width, spec.height, &a.out.join("background.pgm"))?;
    let spec_path = a.out.join("scene.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&spec).expect("spec serializes"))
        .map_err(|e| CdmdError::Io { path: spec_path, source: e })?;
    println!("{}", a.out.display());
    Ok(())
}
