use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use csbg::metrics::{aggregate, evaluate_frame, MetricSettings, DEFAULT_TAU};
use csbg::pipeline::{
    ground_truth, list_frames, load_data, load_frame, parse_dims, preprocess, render_mask,
    synth_dataset, write_pgm, ObjectShape, SynthConfig, VectorBundle,
};
use csbg::solvers::OmpConfig;
use csbg::{
    bcs_reconstruct, compress_against, mt_bcs_reconstruct, omp_reconstruct, run_experiment,
    BcsConfig, DesignMatrix, ExperimentConfig, FrameRole, MeasurementVector, ReconstructionResult,
    SolverKind,
};

#[derive(Parser, Debug)]
#[command(
    name = "csbg",
    version,
    about = "Compressive-sensing background subtraction",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded Gaussian design matrix and write it to a file.
    GenMatrix(GenMatrixArgs),
    /// Compress every frame of a directory against a background.
    Compress(CompressArgs),
    /// Reconstruct foregrounds from a bundle of measurement vectors.
    Reconstruct(ReconstructArgs),
    /// Score reconstructed foregrounds against the true frame differences.
    Metrics(MetricsArgs),
    /// Write a synthetic background and frame sequence as PGM files.
    Synth(SynthArgs),
    /// Run the full experiment protocol described by a configuration file.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct GenMatrixArgs {
    /// Number of measurements (matrix rows).
    #[arg(long)]
    rows: usize,
    /// Number of pixels (matrix columns); must exceed --rows.
    #[arg(long)]
    cols: usize,
    /// Seed of the entry stream.
    #[arg(long)]
    seed: u64,
    /// Output matrix file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompressArgs {
    /// Design matrix file written by gen-matrix.
    #[arg(long)]
    matrix: PathBuf,
    /// Background image (PGM, PPM or PNG).
    #[arg(long)]
    background: PathBuf,
    /// Directory of frame images, processed in file-name order.
    #[arg(long)]
    frames_dir: PathBuf,
    /// Downscale every image to ROWSxCOLS before compressing.
    #[arg(long, value_name = "ROWSxCOLS", value_parser = dims_arg)]
    resize: Option<(usize, usize)>,
    /// Output measurement bundle.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Bcs,
    Mtbcs,
    Omp,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Bcs => SolverKind::Bcs,
            SolverArg::Mtbcs => SolverKind::MtBcs,
            SolverArg::Omp => SolverKind::Omp,
        }
    }
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Reconstruction algorithm.
    #[arg(long, value_enum)]
    solver: SolverArg,
    /// Design matrix file the measurements were taken with.
    #[arg(long)]
    matrix: PathBuf,
    /// Measurement bundle written by compress.
    #[arg(long)]
    measurements: PathBuf,
    /// Output bundle of reconstructed foregrounds.
    #[arg(long)]
    out: PathBuf,
    /// Frames reconstructed jointly by mtbcs.
    #[arg(long, default_value_t = 40)]
    batch_size: usize,
    /// Iteration cap for bcs and mtbcs.
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
    /// Relative precision change that counts as converged (bcs, mtbcs).
    #[arg(long, default_value_t = 1e-3)]
    alpha_tolerance: f64,
    /// Atom budget for omp [default: half the measurements].
    #[arg(long)]
    max_atoms: Option<usize>,
    /// Relative residual at which omp stops.
    #[arg(long, default_value_t = 1e-2)]
    residual_tol: f64,
    /// Parallel reconstructions [default: all cores].
    #[arg(long)]
    workers: Option<usize>,
    /// Write reconstruction and mask images here; needs --dims.
    #[arg(long, requires = "dims")]
    masks_dir: Option<PathBuf>,
    /// Frame size ROWSxCOLS used to lay out mask images.
    #[arg(long, value_name = "ROWSxCOLS", value_parser = dims_arg)]
    dims: Option<(usize, usize)>,
    /// Foreground threshold as a fraction of the peak magnitude.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Background image.
    #[arg(long)]
    background: PathBuf,
    /// Directory of the original frames.
    #[arg(long)]
    frames_dir: PathBuf,
    /// Bundle written by reconstruct.
    #[arg(long)]
    reconstructions: PathBuf,
    /// Downscale to ROWSxCOLS, as was done before compressing.
    #[arg(long, value_name = "ROWSxCOLS", value_parser = dims_arg)]
    resize: Option<(usize, usize)>,
    /// Foreground threshold for BS quality.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Output CSV of per-frame metrics.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShapeArg {
    Rectangle,
    Ellipse,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory; receives background.pgm, frames/ and truth/.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 128)]
    rows: usize,
    #[arg(long, default_value_t = 128)]
    cols: usize,
    /// Number of frames.
    #[arg(long, default_value_t = 40)]
    frames: usize,
    /// Number of moving objects.
    #[arg(long, default_value_t = 2)]
    objects: usize,
    /// Object bounding box ROWSxCOLS.
    #[arg(long, value_name = "ROWSxCOLS", value_parser = dims_arg, default_value = "12x20")]
    object_size: (usize, usize),
    /// Intensity added under each object.
    #[arg(long, default_value_t = 50.0)]
    intensity: f64,
    #[arg(long, value_enum, default_value = "rectangle")]
    shape: ShapeArg,
    /// Largest displacement per frame along each axis, in pixels.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Seed of the texture and object tracks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn dims_arg(value: &str) -> Result<(usize, usize), String> {
    parse_dims(value).map_err(|e| e.to_string())
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn gen_matrix(args: GenMatrixArgs) -> CliResult {
    let phi = DesignMatrix::generate(args.rows, args.cols, args.seed)?;
    phi.save(&args.out)?;
    println!("wrote {}x{} matrix (seed {}) to {}", args.rows, args.cols, args.seed, args.out.display());
    Ok(())
}

fn load_preprocessed(
    path: &Path,
    resize: Option<(usize, usize)>,
    role: FrameRole,
) -> csbg::Result<(csbg::FrameVector, (usize, usize))> {
    let image = load_frame(path)?;
    let dims = resize.unwrap_or(image.dims());
    Ok((preprocess(&image, dims, role)?, dims))
}

fn compress(args: CompressArgs) -> CliResult {
    let phi = DesignMatrix::load(&args.matrix)?;
    let (background, dims) = load_preprocessed(&args.background, args.resize, FrameRole::Background)?;
    let projected = phi.apply(background.values())?;
    let mut bundle = VectorBundle::new(phi.rows());
    let frames = list_frames(&args.frames_dir)?;
    for (k, path) in frames.iter().enumerate() {
        let (frame, frame_dims) = load_preprocessed(path, args.resize, FrameRole::Frame)?;
        if frame_dims != dims {
            return Err(format!("{} is {frame_dims:?}, background is {dims:?}", path.display()).into());
        }
        let g = compress_against(&phi, &frame, &projected, k)?;
        bundle.push(k, g.values.as_slice().to_vec())?;
    }
    bundle.save(&args.out)?;
    println!(
        "compressed {} frames of {}x{} to {} measurements each",
        frames.len(),
        dims.0,
        dims.1,
        phi.rows()
    );
    Ok(())
}

fn reconstruct(args: ReconstructArgs) -> CliResult {
    let phi = DesignMatrix::load(&args.matrix)?;
    let input = VectorBundle::load(&args.measurements)?;
    if input.len != phi.rows() {
        return Err(format!(
            "measurement vectors have length {}, matrix has {} rows",
            input.len,
            phi.rows()
        )
        .into());
    }
    if let Some((r, c)) = args.dims {
        if r * c != phi.cols() {
            return Err(format!("--dims {r}x{c} does not match {} matrix columns", phi.cols()).into());
        }
    }
    if args.batch_size == 0 {
        return Err("--batch-size must be at least 1".into());
    }
    let solver = SolverKind::from(args.solver);
    let bcs = BcsConfig {
        max_iterations: args.max_iterations,
        alpha_tolerance: args.alpha_tolerance,
        ..BcsConfig::default()
    };
    bcs.validate()?;
    let omp = OmpConfig {
        max_atoms: args.max_atoms,
        residual_tol: args.residual_tol,
    };
    let measurements: Vec<MeasurementVector> = input
        .entries
        .iter()
        .map(|(k, v)| MeasurementVector::new(v.clone(), *k))
        .collect::<csbg::Result<_>>()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool.build()?;
    let results: Vec<ReconstructionResult> = pool.install(|| -> csbg::Result<_> {
        use rayon::prelude::*;
        match solver {
            SolverKind::MtBcs => {
                let mut all = Vec::with_capacity(measurements.len());
                for batch in measurements.chunks(args.batch_size) {
                    all.extend(mt_bcs_reconstruct(&phi, batch, &bcs)?);
                }
                Ok(all)
            }
            SolverKind::Bcs => measurements.par_iter().map(|g| bcs_reconstruct(&phi, g, &bcs)).collect(),
            SolverKind::Omp => measurements
                .par_iter()
                .map(|g| omp_reconstruct(&phi, g, omp.atoms_for(phi.rows()), omp.residual_tol))
                .collect(),
        }
    })?;

    if let Some(dir) = &args.masks_dir {
        fs::create_dir_all(dir)?;
    }
    let mut out = VectorBundle::new(phi.cols());
    let stdout = std::io::stdout();
    let mut log = stdout.lock();
    for (g, result) in measurements.iter().zip(results) {
        writeln!(
            log,
            "frame {}: {} nonzeros, {} iterations, stop {:?}",
            g.frame_index,
            result.support().len(),
            result.iterations,
            result.stop
        )?;
        if let (Some(dir), Some(dims)) = (&args.masks_dir, args.dims) {
            render_mask(&result.f_hat, dims, args.tau)?.write(dir, &format!("frame_{:04}", g.frame_index))?;
        }
        out.push(g.frame_index, result.f_hat)?;
    }
    out.save(&args.out)?;
    Ok(())
}

fn metrics(args: MetricsArgs) -> CliResult {
    let (background, dims) = load_preprocessed(&args.background, args.resize, FrameRole::Background)?;
    let frames = list_frames(&args.frames_dir)?;
    let recon = VectorBundle::load(&args.reconstructions)?;
    if recon.len != background.len() {
        return Err(format!(
            "reconstructions have {} pixels, frames have {}",
            recon.len,
            background.len()
        )
        .into());
    }
    let settings = MetricSettings::with_tau(args.tau);
    let mut records = Vec::with_capacity(recon.entries.len());
    for (k, f_hat) in &recon.entries {
        let path = frames
            .get(*k)
            .ok_or_else(|| format!("reconstruction of frame {k} but only {} frames", frames.len()))?;
        let (frame, _) = load_preprocessed(path, Some(dims), FrameRole::Frame)?;
        let f = ground_truth(&frame, &background)?;
        records.push(evaluate_frame(*k, f.values(), f_hat, dims, &settings)?);
    }
    let mut csv = String::from("frame,rec_error,bs_quality,psnr_db,ssim\n");
    for r in &records {
        csv.push_str(&format!("{},{},{},{},{}\n", r.frame_index, r.rec_error, r.bs_quality, r.psnr, r.ssim));
    }
    fs::write(&args.out, csv)?;
    let summary = aggregate(&[records])?;
    println!("mean_rec_error={}", summary.mean_rec_error);
    println!("mean_bs_quality={}", summary.mean_bs_quality);
    println!("mean_psnr={}", summary.mean_psnr);
    println!("mean_ssim={}", summary.mean_ssim);
    Ok(())
}

fn synth(args: SynthArgs) -> CliResult {
    let cfg = SynthConfig {
        rows: args.rows,
        cols: args.cols,
        frames: args.frames,
        objects: args.objects,
        object_size: args.object_size,
        intensity: args.intensity,
        shape: match args.shape {
            ShapeArg::Rectangle => ObjectShape::Rectangle,
            ShapeArg::Ellipse => ObjectShape::Ellipse,
        },
        max_speed: args.speed,
        seed: args.seed,
    };
    let data = synth_dataset(&cfg)?;
    let frames_dir = args.out_dir.join("frames");
    let truth_dir = args.out_dir.join("truth");
    fs::create_dir_all(&frames_dir)?;
    fs::create_dir_all(&truth_dir)?;
    let (rows, cols) = (cfg.rows, cfg.cols);
    write_pgm(args.out_dir.join("background.pgm"), rows, cols, &data.sequence.background.to_u8())?;
    for (k, (frame, mask)) in data.sequence.frames.iter().zip(&data.masks).enumerate() {
        write_pgm(frames_dir.join(format!("frame_{k:04}.pgm")), rows, cols, &frame.to_u8())?;
        let mask: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        write_pgm(truth_dir.join(format!("mask_{k:04}.pgm")), rows, cols, &mask)?;
    }
    println!("wrote {} frames of {rows}x{cols} to {}", cfg.frames, args.out_dir.display());
    Ok(())
}

fn run(args: RunArgs) -> CliResult {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    let data = load_data(&cfg)?;
    let report = run_experiment(&cfg, &data)?;
    print!("{}", fs::read_to_string(&report.summary_path)?);
    println!("metrics written to {}", report.csv_path.display());
    Ok(())
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::GenMatrix(a) => gen_matrix(a),
        Command::Compress(a) => compress(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Metrics(a) => metrics(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
    }
}

/// Usage line of the subcommand named in `argv`, or of the whole program.
fn usage_for(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    let sub = argv
        .get(1)
        .and_then(|a| a.to_str())
        .and_then(|name| cmd.find_subcommand_mut(name).map(|s| s.render_usage().to_string()));
    sub.unwrap_or_else(|| cmd.render_usage().to_string())
}

/// Exit 0 on success or help, 1 on a usage error, 2 on a runtime failure.
fn parse_and_dispatch<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => {
                    if !e.to_string().contains("Usage:") {
                        eprintln!("\n{}", usage_for(&argv));
                    }
                    ExitCode::from(1)
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    parse_and_dispatch(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_required_flag_is_usage_error() {
        let err = Cli::try_parse_from(["csbg", "reconstruct", "--solver", "omp"]).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::MissingRequiredArgument);
    }

    #[test]
    fn masks_dir_requires_dims() {
        let err = Cli::try_parse_from([
            "csbg", "reconstruct", "--solver", "bcs", "--matrix", "m", "--measurements", "g",
            "--out", "o", "--masks-dir", "d",
        ])
        .unwrap_err();
        assert_eq!(err.kind(), ErrorKind::MissingRequiredArgument);
    }

    #[test]
    fn dims_flag_parses() {
        let cli = Cli::try_parse_from([
            "csbg", "compress", "--matrix", "m", "--background", "b", "--frames-dir", "f",
            "--resize", "64x48", "--out", "o",
        ])
        .unwrap();
        match cli.command {
            Command::Compress(a) => assert_eq!(a.resize, Some((64, 48))),
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["csbg", "synth", "--out-dir", "x", "--object-size", "9"]).is_err());
    }
}
