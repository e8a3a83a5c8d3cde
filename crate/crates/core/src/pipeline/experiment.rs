//! The full measurement/reconstruction/evaluation protocol over several
//! design matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_frame, MetricsRecord, Summary};
use crate::sensing::{compress_against, DesignMatrix, FrameRole, FrameVector, MeasurementVector};
use crate::solvers::{
    bcs_reconstruct, mt_bcs_reconstruct, omp_reconstruct, ReconstructionResult, SolverKind,
};

use super::config::{DataSource, ExperimentConfig};
use super::frames::{ground_truth, list_frames, load_frame, preprocess, render_mask};
use super::synth::{synth_dataset, FrameSequence};

pub const CSV_HEADER: &str =
    "frame,seed,solver,rec_error,bs_quality,psnr_db,ssim,iterations,wall_ms,status";

/// Outcome of reconstructing and scoring one frame under one design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub seed: u64,
    pub frame_index: usize,
    pub solver: SolverKind,
    /// `Err` holds the error kind tag of a failed reconstruction.
    pub record: std::result::Result<MetricsRecord, &'static str>,
    pub iterations: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub outcomes: Vec<FrameOutcome>,
    /// `None` when every frame failed.
    pub summary: Option<Summary>,
    /// Wall time of every batch, in seconds, across all seeds.
    pub batch_times: Vec<f64>,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

impl ExperimentReport {
    pub fn failed_frames(&self) -> usize {
        self.outcomes.iter().filter(|o| o.record.is_err()).count()
    }

    pub fn mean_batch_time(&self) -> f64 {
        if self.batch_times.is_empty() {
            0.0
        } else {
            self.batch_times.iter().sum::<f64>() / self.batch_times.len() as f64
        }
    }
}

/// Load the frames named by the configuration's data source.
pub fn load_data(cfg: &ExperimentConfig) -> Result<FrameSequence> {
    match &cfg.data {
        DataSource::Synthetic(synth) => Ok(synth_dataset(synth)?.sequence),
        DataSource::Files {
            background,
            frames_dir,
        } => {
            let background = load_frame(background)?;
            let frames = list_frames(frames_dir)?
                .into_iter()
                .map(load_frame)
                .collect::<Result<Vec<_>>>()?;
            FrameSequence::new(background, frames)
        }
    }
}

fn csv_float(v: f64) -> String {
    format!("{v}")
}

fn reconstruct_one(
    cfg: &ExperimentConfig,
    phi: &DesignMatrix,
    g: &MeasurementVector,
) -> Result<ReconstructionResult> {
    match cfg.solver {
        SolverKind::Omp => {
            let atoms = cfg.omp.atoms_for(phi.rows());
            omp_reconstruct(phi, g, atoms, cfg.omp.residual_tol)
        }
        _ => bcs_reconstruct(phi, g, &cfg.bcs),
    }
}

/// Run every matrix seed over every frame, write `metrics.csv`,
/// `per_frame.csv`, `summary.txt` and (optionally) mask images under
/// `cfg.output_dir`, and return the collected outcomes.
///
/// Reconstruction failures are recorded per frame; only I/O errors abort.
pub fn run_experiment(cfg: &ExperimentConfig, data: &FrameSequence) -> Result<ExperimentReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("frame sequence"));
    }
    let dims = cfg.resize_to.unwrap_or(data.dims());
    let n = dims.0 * dims.1;
    if cfg.measurements >= n {
        return Err(Error::InvalidCompressionRegime {
            rows: cfg.measurements,
            cols: n,
        });
    }

    let background = preprocess(&data.background, dims, FrameRole::Background)?;
    let frames: Vec<FrameVector> = data
        .frames
        .iter()
        .map(|img| preprocess(img, dims, FrameRole::Frame))
        .collect::<Result<_>>()?;
    let truths: Vec<FrameVector> = frames
        .iter()
        .map(|v| ground_truth(v, &background))
        .collect::<Result<_>>()?;

    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mask_dir = cfg.output_dir.join("masks");
    if cfg.write_masks {
        fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;

    let mut outcomes = Vec::with_capacity(cfg.matrix_seeds.len() * frames.len());
    let mut batch_times = Vec::new();
    let mut per_seed_records = Vec::with_capacity(cfg.matrix_seeds.len());

    for (seed_pos, &seed) in cfg.matrix_seeds.iter().enumerate() {
        let phi = DesignMatrix::generate(cfg.measurements, n, seed)?;
        let projected_background = phi.apply(background.values())?;
        let measurements: Vec<MeasurementVector> = pool.install(|| {
            frames
                .par_iter()
                .enumerate()
                .map(|(k, v)| compress_against(&phi, v, &projected_background, k))
                .collect::<Result<_>>()
        })?;

        let mut seed_outcomes = Vec::with_capacity(frames.len());
        for batch in measurements.chunks(cfg.batch_size) {
            let started = Instant::now();
            let results: Vec<std::result::Result<ReconstructionResult, &'static str>> =
                match cfg.solver {
                    SolverKind::MtBcs => {
                        match pool.install(|| mt_bcs_reconstruct(&phi, batch, &cfg.bcs)) {
                            Ok(results) => results.into_iter().map(Ok).collect(),
                            Err(e) => vec![Err(e.kind()); batch.len()],
                        }
                    }
                    _ => pool.install(|| {
                        batch
                            .par_iter()
                            .map(|g| reconstruct_one(cfg, &phi, g).map_err(|e| e.kind()))
                            .collect()
                    }),
                };
            batch_times.push(started.elapsed().as_secs_f64());

            let scored: Vec<FrameOutcome> = pool.install(|| {
                batch
                    .par_iter()
                    .zip(results.into_par_iter())
                    .map(|(g, result)| {
                        let k = g.frame_index;
                        match result {
                            Ok(rec) => {
                                let record = evaluate_frame(
                                    k,
                                    truths[k].values(),
                                    &rec.f_hat,
                                    dims,
                                    &cfg.metrics,
                                )
                                .map_err(|e| e.kind());
                                (
                                    FrameOutcome {
                                        seed,
                                        frame_index: k,
                                        solver: cfg.solver,
                                        record,
                                        iterations: rec.iterations,
                                        wall_ms: rec.wall_time.as_secs_f64() * 1e3,
                                    },
                                    Some(rec.f_hat),
                                )
                            }
                            Err(kind) => (
                                FrameOutcome {
                                    seed,
                                    frame_index: k,
                                    solver: cfg.solver,
                                    record: Err(kind),
                                    iterations: 0,
                                    wall_ms: 0.0,
                                },
                                None,
                            ),
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .map(|(outcome, f_hat)| -> Result<FrameOutcome> {
                if cfg.write_masks && seed_pos == 0 {
                    if let Some(f_hat) = f_hat {
                        render_mask(&f_hat, dims, cfg.metrics.tau)?
                            .write(&mask_dir, &format!("frame_{:04}", outcome.frame_index))?;
                    }
                }
                Ok(outcome)
            })
            .collect::<Result<_>>()?;
            seed_outcomes.extend(scored);
        }

        seed_outcomes.sort_by_key(|o| o.frame_index);
        per_seed_records.push(
            seed_outcomes
                .iter()
                .filter_map(|o| o.record.as_ref().ok().cloned())
                .collect::<Vec<_>>(),
        );
        outcomes.extend(seed_outcomes);
    }

    let summary = aggregate(&per_seed_records).ok();
    let report = ExperimentReport {
        outcomes,
        summary,
        batch_times,
        csv_path: cfg.output_dir.join("metrics.csv"),
        summary_path: cfg.output_dir.join("summary.txt"),
    };
    write_metrics_csv(&report.csv_path, &report.outcomes, cfg.record_wall_time)?;
    write_summary(&report.summary_path, cfg, n, frames.len(), &report)?;
    if let Some(summary) = &report.summary {
        write_per_frame_csv(&cfg.output_dir.join("per_frame.csv"), summary)?;
    }
    Ok(report)
}

pub fn metrics_csv(outcomes: &[FrameOutcome], record_wall_time: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for o in outcomes {
        let wall = if record_wall_time {
            format!("{:.3}", o.wall_ms)
        } else {
            "0".to_string()
        };
        let (fields, status) = match &o.record {
            Ok(r) => (
                [r.rec_error, r.bs_quality, r.psnr, r.ssim].map(csv_float),
                "ok".to_string(),
            ),
            Err(kind) => (
                [f64::NAN; 4].map(csv_float),
                format!("failed({kind})"),
            ),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            o.frame_index,
            o.seed,
            o.solver,
            fields[0],
            fields[1],
            fields[2],
            fields[3],
            o.iterations,
            wall,
            status
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_metrics_csv(path: &Path, outcomes: &[FrameOutcome], record_wall_time: bool) -> Result<()> {
    write_text(path, &metrics_csv(outcomes, record_wall_time))
}

fn write_per_frame_csv(path: &Path, summary: &Summary) -> Result<()> {
    let mut out = String::from("frame,runs,rec_error,bs_quality,psnr_db,ssim\n");
    for f in &summary.per_frame {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            f.frame_index,
            f.runs,
            csv_float(f.rec_error),
            csv_float(f.bs_quality),
            csv_float(f.psnr),
            csv_float(f.ssim)
        );
    }
    write_text(path, &out)
}

fn write_summary(
    path: &Path,
    cfg: &ExperimentConfig,
    pixels: usize,
    frames: usize,
    report: &ExperimentReport,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "solver={}", cfg.solver);
    let _ = writeln!(out, "measurements={}", cfg.measurements);
    let _ = writeln!(out, "pixels={pixels}");
    let _ = writeln!(out, "frames={frames}");
    let _ = writeln!(out, "seeds={}", cfg.matrix_seeds.len());
    let _ = writeln!(out, "batch_size={}", cfg.batch_size);
    let _ = writeln!(out, "failed_frames={}", report.failed_frames());
    let nan = f64::NAN;
    let s = report.summary.as_ref();
    let _ = writeln!(out, "mean_rec_error={}", csv_float(s.map_or(nan, |s| s.mean_rec_error)));
    let _ = writeln!(out, "mean_bs_quality={}", csv_float(s.map_or(nan, |s| s.mean_bs_quality)));
    let _ = writeln!(out, "mean_psnr={}", csv_float(s.map_or(nan, |s| s.mean_psnr)));
    let _ = writeln!(out, "mean_ssim={}", csv_float(s.map_or(nan, |s| s.mean_ssim)));
    let _ = writeln!(out, "mean_batch_time_s={}", csv_float(report.mean_batch_time()));
    write_text(path, &out)
}
