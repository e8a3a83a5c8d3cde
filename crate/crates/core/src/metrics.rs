//! Reconstruction quality measures and their aggregation across runs.

use std::collections::BTreeMap;

use crate::error::{check_len, Error, Result};
use crate::image::Image;

/// PSNR reported when the two signals are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Default relative threshold for foreground membership.
pub const DEFAULT_TAU: f64 = 0.1;

/// `|f − f̂| / |f|`. When `f` is identically zero the ratio is undefined; it
/// is reported as `0` if `f̂` is zero too and `+inf` otherwise.
pub fn reconstruction_error(f: &[f64], f_hat: &[f64]) -> Result<f64> {
    check_len("reconstruction", f.len(), f_hat.len())?;
    let truth = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = f
        .iter()
        .zip(f_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if truth == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(diff / truth)
}

/// Indices with `|x_i| > tau * max_j |x_j|`. Empty for the zero vector.
pub fn foreground_set(x: &[f64], tau: f64) -> Vec<usize> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Vec::new();
    }
    let cut = tau * peak;
    x.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > cut)
        .map(|(i, _)| i)
        .collect()
}

/// Jaccard index of the thresholded foreground sets; `1` when both are empty.
pub fn bs_quality(f: &[f64], f_hat: &[f64], tau: f64) -> Result<f64> {
    check_len("reconstruction", f.len(), f_hat.len())?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!("tau must lie in (0, 1), got {tau}")));
    }
    let truth = foreground_set(f, tau);
    let estimate = foreground_set(f_hat, tau);
    Ok(jaccard(&truth, &estimate))
}

/// Intersection over union of two ascending index lists.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut both) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                both += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - both;
    if union == 0 {
        1.0
    } else {
        both as f64 / union as f64
    }
}

/// `10 log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(f: &[f64], f_hat: &[f64], peak: f64) -> Result<f64> {
    check_len("reconstruction", f.len(), f_hat.len())?;
    if f.is_empty() {
        return Err(Error::EmptyInput("psnr"));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig("psnr peak must be positive".into()));
    }
    let mse = f
        .iter()
        .zip(f_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / f.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    /// Side length of the square window; odd, at least 3.
    pub window: usize,
    pub window_kind: WindowKind,
    pub gaussian_sigma: f64,
    pub c1: f64,
    pub c2: f64,
    /// Dynamic range `L` the constants were derived from.
    pub peak: f64,
}

impl SsimParams {
    /// 11x11 Gaussian window, σ = 1.5, `C1 = (0.01 L)²`, `C2 = (0.03 L)²`.
    pub fn for_peak(peak: f64) -> Self {
        Self {
            window: 11,
            window_kind: WindowKind::Gaussian,
            gaussian_sigma: 1.5,
            c1: (0.01 * peak).powi(2),
            c2: (0.03 * peak).powi(2),
            peak,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::InvalidConfig("SSIM constants must be positive".into()));
        }
        if self.window_kind == WindowKind::Gaussian && !(self.gaussian_sigma > 0.0) {
            return Err(Error::InvalidConfig("SSIM sigma must be positive".into()));
        }
        Ok(())
    }

    /// Normalized 1-D window; the 2-D window is its outer product.
    pub fn weights(&self) -> Vec<f64> {
        let radius = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| match self.window_kind {
                WindowKind::Uniform => 1.0,
                WindowKind::Gaussian => {
                    let d = i as f64 - radius;
                    (-d * d / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

impl Default for SsimParams {
    fn default() -> Self {
        Self::for_peak(255.0)
    }
}

/// Separable weighted sum over every window position that fits entirely
/// inside the image.
fn filter_valid(img: &[f64], rows: usize, cols: usize, w: &[f64]) -> Vec<f64> {
    let k = w.len();
    let (out_r, out_c) = (rows - k + 1, cols - k + 1);
    let mut horizontal = vec![0.0; rows * out_c];
    for r in 0..rows {
        let row = &img[r * cols..(r + 1) * cols];
        for c in 0..out_c {
            horizontal[r * out_c + c] = w.iter().zip(&row[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; out_r * out_c];
    for r in 0..out_r {
        for c in 0..out_c {
            out[r * out_c + c] = w
                .iter()
                .enumerate()
                .map(|(i, wi)| wi * horizontal[(r + i) * out_c + c])
                .sum();
        }
    }
    out
}

/// Local SSIM at every valid window position.
pub fn ssim_map(f: &Image, f_hat: &Image, params: &SsimParams) -> Result<Image> {
    params.validate()?;
    if f.dims() != f_hat.dims() {
        return Err(Error::DimensionMismatch {
            what: "SSIM image",
            expected: f.len(),
            found: f_hat.len(),
        });
    }
    let (rows, cols) = f.dims();
    if params.window > rows || params.window > cols {
        return Err(Error::InvalidConfig(format!(
            "SSIM window {} exceeds image {rows}x{cols}",
            params.window
        )));
    }
    let w = params.weights();
    let x = f.pixels();
    let y = f_hat.pixels();
    let product = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_x = filter_valid(x, rows, cols, &w);
    let mu_y = filter_valid(y, rows, cols, &w);
    let xx = filter_valid(&product(x, x), rows, cols, &w);
    let yy = filter_valid(&product(y, y), rows, cols, &w);
    let xy = filter_valid(&product(x, y), rows, cols, &w);
    let (c1, c2) = (params.c1, params.c2);
    let values = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = xx[i] - mx * mx;
            let var_y = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2))
        })
        .collect();
    Image::new(rows - params.window + 1, cols - params.window + 1, values)
}

/// Mean local SSIM over all valid window positions.
pub fn ssim(f: &Image, f_hat: &Image, params: &SsimParams) -> Result<f64> {
    let map = ssim_map(f, f_hat, params)?;
    Ok(map.pixels().iter().sum::<f64>() / map.len() as f64)
}

/// The four quality measures for one reconstructed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub frame_index: usize,
    pub rec_error: f64,
    pub bs_quality: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRecord {
    /// True when the ground truth was zero but the estimate was not, making
    /// the relative error infinite.
    pub fn rec_error_undefined(&self) -> bool {
        self.rec_error.is_infinite()
    }
}

/// Settings shared by every per-frame evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSettings {
    pub tau: f64,
    pub peak: f64,
    pub ssim: SsimParams,
}

impl MetricSettings {
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            peak: 255.0,
            ssim: SsimParams::default(),
        }
    }
}

/// Compute all four measures between a ground-truth foreground and its
/// reconstruction, both laid out row-major with the given dimensions.
pub fn evaluate_frame(
    frame_index: usize,
    f: &[f64],
    f_hat: &[f64],
    dims: (usize, usize),
    settings: &MetricSettings,
) -> Result<MetricsRecord> {
    let truth = Image::new(dims.0, dims.1, f.to_vec())?;
    let estimate = Image::new(dims.0, dims.1, f_hat.to_vec())?;
    Ok(MetricsRecord {
        frame_index,
        rec_error: reconstruction_error(f, f_hat)?,
        bs_quality: bs_quality(f, f_hat, settings.tau)?,
        psnr: psnr(f, f_hat, settings.peak)?,
        ssim: ssim(&truth, &estimate, &settings.ssim)?,
    })
}

/// Median of each measure for one frame across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSummary {
    pub frame_index: usize,
    pub runs: usize,
    pub rec_error: f64,
    pub bs_quality: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-frame medians across runs and their means across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub per_frame: Vec<FrameSummary>,
    pub mean_rec_error: f64,
    pub mean_bs_quality: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregate one list of records per run (design matrix): the median across
/// runs for each frame, then the mean of those medians across frames. A frame
/// missing from some runs (failed reconstructions) uses the runs it has.
pub fn aggregate(runs: &[Vec<MetricsRecord>]) -> Result<Summary> {
    let mut by_frame: BTreeMap<usize, Vec<&MetricsRecord>> = BTreeMap::new();
    for record in runs.iter().flatten() {
        by_frame.entry(record.frame_index).or_default().push(record);
    }
    if by_frame.is_empty() {
        return Err(Error::EmptyInput("metrics records"));
    }
    let per_frame: Vec<FrameSummary> = by_frame
        .into_iter()
        .map(|(frame_index, records)| {
            let column = |get: fn(&MetricsRecord) -> f64| {
                median(&mut records.iter().map(|r| get(r)).collect::<Vec<_>>())
            };
            FrameSummary {
                frame_index,
                runs: records.len(),
                rec_error: column(|r| r.rec_error),
                bs_quality: column(|r| r.bs_quality),
                psnr: column(|r| r.psnr),
                ssim: column(|r| r.ssim),
            }
        })
        .collect();
    let count = per_frame.len() as f64;
    let mean = |get: fn(&FrameSummary) -> f64| per_frame.iter().map(get).sum::<f64>() / count;
    Ok(Summary {
        mean_rec_error: mean(|f| f.rec_error),
        mean_bs_quality: mean(|f| f.bs_quality),
        mean_psnr: mean(|f| f.psnr),
        mean_ssim: mean(|f| f.ssim),
        per_frame,
    })
}
