//! Experiment configuration and its `key = value` text format.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Relative paths are resolved against the directory holding the file.
//!
//! ```text
//! solver = bcs            # bcs | mtbcs | omp
//! measurements = 2000
//! seeds = 1..10           # inclusive range or comma list
//! batch_size = 40
//! tau = 0.1
//! resize = 128x128        # rows x cols, optional
//! workers = 4             # 0 = all cores
//! output_dir = results
//! source = files          # files | synthetic
//! background = data/background.pgm
//! frames_dir = data/frames
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::MetricSettings;
use crate::solvers::{BcsConfig, BetaInit, OmpConfig, SolverKind};

use super::synth::{ObjectShape, SynthConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files {
        background: PathBuf,
        frames_dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub measurements: usize,
    pub matrix_seeds: Vec<u64>,
    /// Frames per batch. Multitask BCS reconstructs each batch jointly; for
    /// the other solvers batches only delimit the timing windows.
    pub batch_size: usize,
    pub solver: SolverKind,
    pub bcs: BcsConfig,
    pub omp: OmpConfig,
    pub metrics: MetricSettings,
    pub resize_to: Option<(usize, usize)>,
    /// Parallel frame reconstructions; 0 means all available cores.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Write reconstruction and mask images for the first matrix seed.
    pub write_masks: bool,
    /// When false, the `wall_ms` column is written as 0 so that repeated
    /// runs produce byte-identical CSVs.
    pub record_wall_time: bool,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            measurements: 2000,
            matrix_seeds: (1..=10).collect(),
            batch_size: 40,
            solver: SolverKind::Bcs,
            bcs: BcsConfig::default(),
            omp: OmpConfig::default(),
            metrics: MetricSettings::default(),
            resize_to: None,
            workers: 0,
            output_dir: PathBuf::from("results"),
            write_masks: true,
            record_wall_time: true,
            data: DataSource::Synthetic(SynthConfig::default()),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("cannot parse {key} = {value:?} as a flag"))),
    }
}

/// `"1..10"` (inclusive) or `"1,4,7"`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = parse("seeds", lo.trim())?;
        let hi: u64 = parse("seeds", hi.trim().trim_start_matches('='))?;
        (lo..=hi).collect()
    } else {
        value
            .split(',')
            .map(|s| parse("seeds", s.trim()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("seeds must not be empty".into()));
    }
    Ok(seeds)
}

/// `"128x128"` as `(rows, cols)`.
pub fn parse_dims(value: &str) -> Result<(usize, usize)> {
    let (r, c) = value
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidConfig(format!("dimensions must look like 128x128, got {value:?}")))?;
    Ok((parse("dims", r.trim())?, parse("dims", c.trim())?))
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base)
    }

    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut synth = SynthConfig::default();
        let mut source = "synthetic".to_string();
        let mut background = None;
        let mut frames_dir = None;
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "measurements" => cfg.measurements = parse(key, value)?,
                "seeds" => cfg.matrix_seeds = parse_seeds(value)?,
                "batch_size" => cfg.batch_size = parse(key, value)?,
                "solver" => cfg.solver = value.parse()?,
                "tau" => cfg.metrics.tau = parse(key, value)?,
                "resize" => cfg.resize_to = Some(parse_dims(value)?),
                "workers" => cfg.workers = parse(key, value)?,
                "output_dir" => cfg.output_dir = resolve(value),
                "write_masks" => cfg.write_masks = parse_bool(key, value)?,
                "record_wall_time" => cfg.record_wall_time = parse_bool(key, value)?,
                "max_iterations" => cfg.bcs.max_iterations = parse(key, value)?,
                "alpha_tolerance" => cfg.bcs.alpha_tolerance = parse(key, value)?,
                "alpha_prune" => cfg.bcs.alpha_prune = parse(key, value)?,
                "alpha_init" => cfg.bcs.alpha_init = parse(key, value)?,
                "beta_init" => {
                    cfg.bcs.beta_init = if value.eq_ignore_ascii_case("auto") {
                        BetaInit::Auto
                    } else {
                        BetaInit::Fixed(parse(key, value)?)
                    }
                }
                "hyper_a" => cfg.bcs.hyper_a = parse(key, value)?,
                "hyper_b" => cfg.bcs.hyper_b = parse(key, value)?,
                "hyper_c" => cfg.bcs.hyper_c = parse(key, value)?,
                "hyper_d" => cfg.bcs.hyper_d = parse(key, value)?,
                "omp_max_atoms" => cfg.omp.max_atoms = Some(parse(key, value)?),
                "omp_residual_tol" => cfg.omp.residual_tol = parse(key, value)?,
                "source" => source = value.to_ascii_lowercase(),
                "background" => background = Some(resolve(value)),
                "frames_dir" => frames_dir = Some(resolve(value)),
                "synth_rows" => synth.rows = parse(key, value)?,
                "synth_cols" => synth.cols = parse(key, value)?,
                "synth_frames" => synth.frames = parse(key, value)?,
                "synth_objects" => synth.objects = parse(key, value)?,
                "synth_object_size" => synth.object_size = parse_dims(value)?,
                "synth_intensity" => synth.intensity = parse(key, value)?,
                "synth_speed" => synth.max_speed = parse(key, value)?,
                "synth_seed" => synth.seed = parse(key, value)?,
                "synth_shape" => {
                    synth.shape = match value.to_ascii_lowercase().as_str() {
                        "rectangle" | "rect" => ObjectShape::Rectangle,
                        "ellipse" => ObjectShape::Ellipse,
                        _ => return Err(Error::InvalidConfig(format!("unknown shape {value:?}"))),
                    }
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key {key:?}",
                        lineno + 1
                    )))
                }
            }
        }

        cfg.data = match source.as_str() {
            "synthetic" => DataSource::Synthetic(synth),
            "files" => DataSource::Files {
                background: background
                    .ok_or_else(|| Error::InvalidConfig("source = files needs background".into()))?,
                frames_dir: frames_dir
                    .ok_or_else(|| Error::InvalidConfig("source = files needs frames_dir".into()))?,
            },
            other => return Err(Error::InvalidConfig(format!("unknown source {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not depend on the frame size.
    pub fn validate(&self) -> Result<()> {
        if self.measurements == 0 {
            return Err(Error::InvalidConfig("measurements must be positive".into()));
        }
        if self.matrix_seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one matrix seed is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        let tau = self.metrics.tau;
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1), got {tau}")));
        }
        self.bcs.validate()?;
        self.metrics.ssim.validate()
    }

    pub fn worker_count(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        }
    }
}
