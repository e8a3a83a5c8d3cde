//! Deterministic synthetic video: a textured static background with moving
//! rectangular or elliptical objects of known support.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// A background frame and the video frames recorded against it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub background: Image,
    pub frames: Vec<Image>,
}

impl FrameSequence {
    pub fn new(background: Image, frames: Vec<Image>) -> Result<Self> {
        let dims = background.dims();
        for img in std::iter::once(&background).chain(&frames) {
            if img.dims() != dims {
                return Err(Error::DimensionMismatch {
                    what: "frame size",
                    expected: background.len(),
                    found: img.len(),
                });
            }
            if let Some(&bad) = img.pixels().iter().find(|v| !(0.0..=255.0).contains(*v)) {
                return Err(Error::OutOfRange {
                    what: "frame intensity",
                    value: bad,
                });
            }
        }
        Ok(Self { background, frames })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.background.dims()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectShape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    pub objects: usize,
    /// Bounding box of each object, `(rows, cols)`.
    pub object_size: (usize, usize),
    /// Added to the background under each object, then clamped to `[0, 255]`.
    pub intensity: f64,
    pub shape: ObjectShape,
    /// Largest per-axis displacement per frame, in pixels. Zero keeps the
    /// objects static.
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 128,
            cols: 128,
            frames: 40,
            objects: 2,
            object_size: (12, 20),
            intensity: 50.0,
            shape: ObjectShape::Rectangle,
            max_speed: 1.0,
            seed: 0,
        }
    }
}

/// A synthetic sequence together with the true foreground support of every
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub sequence: FrameSequence,
    pub masks: Vec<Vec<bool>>,
}

struct Uniform(ChaCha20Rng);

impl Uniform {
    fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }
}

/// Fold `x` into `[0, span]` by reflecting at both ends.
fn bounce(x: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * span;
    let folded = x.rem_euclid(period);
    if folded > span {
        period - folded
    } else {
        folded
    }
}

fn footprint(shape: ObjectShape, size: (usize, usize)) -> Vec<(usize, usize)> {
    let (h, w) = size;
    let mut cells = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let inside = match shape {
                ObjectShape::Rectangle => true,
                ObjectShape::Ellipse => {
                    let dy = (r as f64 + 0.5) / h as f64 * 2.0 - 1.0;
                    let dx = (c as f64 + 0.5) / w as f64 * 2.0 - 1.0;
                    dx * dx + dy * dy <= 1.0
                }
            };
            if inside {
                cells.push((r, c));
            }
        }
    }
    cells
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<SyntheticData> {
    let (rows, cols) = (cfg.rows, cfg.cols);
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyDimension { rows, cols });
    }
    if cfg.objects > 0 {
        let (h, w) = cfg.object_size;
        if h == 0 || w == 0 || h > rows || w > cols {
            return Err(Error::InfeasibleGeometry(format!(
                "object {h}x{w} does not fit in {rows}x{cols}"
            )));
        }
    }
    if !cfg.intensity.is_finite() || !(cfg.max_speed >= 0.0 && cfg.max_speed.is_finite()) {
        return Err(Error::InvalidConfig("intensity and speed must be finite, speed >= 0".into()));
    }

    let mut rng = Uniform(ChaCha20Rng::seed_from_u64(cfg.seed));

    // Smooth gradient in [60, 180] plus up to ±10 of texture, on the integer
    // grid like an 8-bit camera frame.
    let mut background = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let gradient = 60.0 + 80.0 * r as f64 / rows as f64 + 40.0 * c as f64 / cols as f64;
            let texture = rng.range(-10.0, 10.0);
            background[r * cols + c] = (gradient + texture).round().clamp(0.0, 255.0);
        }
    }

    let (h, w) = cfg.object_size;
    let cells = footprint(cfg.shape, cfg.object_size);
    let span_r = rows.saturating_sub(h) as f64;
    let span_c = cols.saturating_sub(w) as f64;
    let tracks: Vec<[f64; 4]> = (0..cfg.objects)
        .map(|_| {
            [
                rng.range(0.0, span_r),
                rng.range(0.0, span_c),
                rng.range(-cfg.max_speed, cfg.max_speed),
                rng.range(-cfg.max_speed, cfg.max_speed),
            ]
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let mut mask = vec![false; rows * cols];
        for &[r0, c0, vr, vc] in &tracks {
            let top = bounce(r0 + vr * t as f64, span_r).round() as usize;
            let left = bounce(c0 + vc * t as f64, span_c).round() as usize;
            for &(dr, dc) in &cells {
                mask[(top + dr) * cols + left + dc] = true;
            }
        }
        let pixels = background
            .iter()
            .zip(&mask)
            .map(|(&b, &m)| if m { (b + cfg.intensity).clamp(0.0, 255.0) } else { b })
            .collect();
        frames.push(Image::new(rows, cols, pixels)?);
        masks.push(mask);
    }

    Ok(SyntheticData {
        sequence: FrameSequence::new(Image::new(rows, cols, background)?, frames)?,
        masks,
    })
}
