//! Frame decoding, preprocessing and mask rendering.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{check_len, Error, Result};
use crate::image::Image;
use crate::metrics::foreground_set;
use crate::sensing::{FrameRole, FrameVector};

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

/// Load a grayscale frame from a binary PGM (P5), binary PPM (P6) or PNG
/// file. Color inputs are converted with BT.601 luma weights; all outputs
/// are scaled to `[0, 255]`.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frame(&bytes)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else {
        Err(Error::UnsupportedFormat(
            "expected binary PGM (P5), PPM (P6) or PNG".into(),
        ))
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptImage(format!("bad PNM {what}")))
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = if bytes[1] == b'6' { 3 } else { 1 };
    let mut cursor = HeaderCursor { bytes, pos: 2 };
    let cols = cursor.number("width")?;
    let rows = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if rows == 0 || cols == 0 {
        return Err(Error::CorruptImage("zero PNM dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::CorruptImage(format!("PNM maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cursor.pos) {
        Some(c) if c.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(Error::CorruptImage("missing raster separator".into())),
    }
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let needed = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(channels * sample_bytes))
        .ok_or_else(|| Error::CorruptImage("PNM dimensions overflow".into()))?;
    let raster = &bytes[cursor.pos..];
    if raster.len() < needed {
        return Err(Error::CorruptImage(format!(
            "PNM raster truncated: {} of {needed} bytes",
            raster.len()
        )));
    }
    let scale = 255.0 / maxval as f64;
    let samples: Vec<f64> = if sample_bytes == 1 {
        raster[..needed].iter().map(|&b| b as f64).collect()
    } else {
        raster[..needed]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    let pixels = if channels == 1 {
        samples
            .into_iter()
            .map(|v| if maxval == 255 { v } else { v * scale })
            .collect()
    } else {
        samples
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]) * scale)
            .collect()
    };
    Image::new(rows, cols, pixels)
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    use image::DynamicImage;

    let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::CorruptImage(e.to_string()))?;
    let (cols, rows) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<f64> = match &decoded {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            decoded.to_luma8().into_raw().into_iter().map(f64::from).collect()
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => decoded
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 * 255.0 / 65535.0)
            .collect(),
        _ => decoded
            .to_rgb32f()
            .into_raw()
            .chunks_exact(3)
            .map(|p| (luma(p[0] as f64, p[1] as f64, p[2] as f64) * 255.0).clamp(0.0, 255.0))
            .collect(),
    };
    Image::new(rows, cols, pixels)
}

/// Binary PGM (P5) encoding of 8-bit samples.
pub fn encode_pgm(rows: usize, cols: usize, samples: &[u8]) -> Result<Vec<u8>> {
    check_len("PGM samples", rows * cols, samples.len())?;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, rows: usize, cols: usize, samples: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(rows, cols, samples)?).map_err(|e| Error::io(path, e))
}

/// Per-target-cell `(source index, weight)` lists for box-filter resampling
/// of `source` samples onto `target` samples. Weights are exact overlap
/// fractions and sum to one for every target cell.
fn area_weights(source: usize, target: usize) -> Vec<Vec<(usize, f64)>> {
    (0..target)
        .map(|j| {
            // Work in units of 1/target so interval ends are integers.
            let (lo, hi) = (j * source, (j + 1) * source);
            let first = lo / target;
            let last = hi.div_ceil(target).min(source);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min((i + 1) * target).saturating_sub(lo.max(i * target));
                    (overlap > 0).then(|| (i, overlap as f64 / source as f64))
                })
                .collect()
        })
        .collect()
}

/// Area-average downscale. Upscaling is rejected.
pub fn resize_area(image: &Image, target: (usize, usize)) -> Result<Image> {
    let (rows, cols) = image.dims();
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::EmptyDimension {
            rows: target.0,
            cols: target.1,
        });
    }
    if target.0 > rows || target.1 > cols {
        return Err(Error::UnsupportedResize {
            from: (rows, cols),
            to: target,
        });
    }
    if target == (rows, cols) {
        return Ok(image.clone());
    }
    let row_weights = area_weights(rows, target.0);
    let col_weights = area_weights(cols, target.1);
    let mut horizontal = vec![0.0; rows * target.1];
    for r in 0..rows {
        for (c, weights) in col_weights.iter().enumerate() {
            horizontal[r * target.1 + c] = weights.iter().map(|&(i, w)| w * image.get(r, i)).sum();
        }
    }
    let mut out = vec![0.0; target.0 * target.1];
    for (r, weights) in row_weights.iter().enumerate() {
        for c in 0..target.1 {
            out[r * target.1 + c] = weights
                .iter()
                .map(|&(i, w)| w * horizontal[i * target.1 + c])
                .sum();
        }
    }
    Image::new(target.0, target.1, out)
}

/// Downscale to `target` and flatten row-major.
pub fn preprocess(image: &Image, target: (usize, usize), role: FrameRole) -> Result<FrameVector> {
    let resized = resize_area(image, target)?;
    let values = resized
        .into_pixels()
        .into_iter()
        .map(|v| if role == FrameRole::Foreground { v } else { v.clamp(0.0, 255.0) })
        .collect();
    FrameVector::new(values, role)
}

/// Signed foreground `f = v − b`.
pub fn ground_truth(frame: &FrameVector, background: &FrameVector) -> Result<FrameVector> {
    check_len("background", frame.len(), background.len())?;
    FrameVector::foreground(
        frame
            .values()
            .iter()
            .zip(background.values())
            .map(|(v, b)| v - b)
            .collect(),
    )
}

/// 8-bit renderings of a reconstruction: the signed values min-max rescaled
/// to `[0, 255]`, and the binary foreground mask at threshold `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMask {
    pub rows: usize,
    pub cols: usize,
    pub reconstruction: Vec<u8>,
    pub mask: Vec<u8>,
}

impl RenderedMask {
    /// Writes `<stem>_recon.pgm` and `<stem>_mask.pgm` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        let recon = dir.join(format!("{stem}_recon.pgm"));
        let mask = dir.join(format!("{stem}_mask.pgm"));
        write_pgm(&recon, self.rows, self.cols, &self.reconstruction)?;
        write_pgm(&mask, self.rows, self.cols, &self.mask)?;
        Ok((recon, mask))
    }
}

pub fn render_mask(f_hat: &[f64], dims: (usize, usize), tau: f64) -> Result<RenderedMask> {
    check_len("reconstruction", dims.0 * dims.1, f_hat.len())?;
    let lo = f_hat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let reconstruction = f_hat
        .iter()
        .map(|&v| {
            if hi > lo {
                ((v - lo) / (hi - lo) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    let mut mask = vec![0u8; f_hat.len()];
    for i in foreground_set(f_hat, tau) {
        mask[i] = 255;
    }
    Ok(RenderedMask {
        rows: dims.0,
        cols: dims.1,
        reconstruction,
        mask,
    })
}

/// Image files (`.pgm`, `.ppm`, `.png`) in `dir`, sorted by file name.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "png"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}
