//! Gaussian design matrices and acquisition-side compression.
//!
//! A design matrix is generated from a ChaCha20 stream (`rand_chacha`,
//! seeded with `seed_from_u64`). Entries are drawn in row-major order, two
//! at a time, through the Box-Muller transform applied to 53-bit uniforms on
//! `(0, 1]`, then scaled by `1/sqrt(rows)` so that `E|Φx|² = |x|²`. The
//! transform has no rejection step, so the uniform stream consumed is fixed
//! by `(rows, cols, seed)`. Entries are bit-identical wherever `ln`, `sqrt`,
//! `sin` and `cos` round identically; the saved matrix file is the exact
//! artifact to share between machines.
//!
//! Matrix file layout (all integers and floats little-endian):
//!
//! ```text
//! "SBSM1" | u64 rows | u64 cols | u64 seed | rows*cols f64, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{check_len, Error, Result};

pub const MATRIX_MAGIC: &[u8; 5] = b"SBSM1";
const HEADER_LEN: usize = MATRIX_MAGIC.len() + 3 * 8;

/// The `s x n` measurement operator together with the seed it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    seed: u64,
    entries: DMatrix<f64>,
}

impl DesignMatrix {
    /// Draw an i.i.d. `N(0, 1/rows)` matrix. Requires `0 < rows < cols`.
    pub fn generate(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDimension { rows, cols });
        }
        if rows >= cols {
            return Err(Error::InvalidCompressionRegime { rows, cols });
        }
        let mut stream = GaussianStream::new(seed);
        let scale = 1.0 / (rows as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| stream.next() * scale).collect();
        Ok(Self {
            seed,
            entries: DMatrix::from_row_slice(rows, cols, &data),
        })
    }

    /// Wrap explicit row-major entries. Unlike [`DesignMatrix::generate`]
    /// this accepts square or tall operators, which is useful for
    /// hand-constructed systems.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64], seed: u64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDimension { rows, cols });
        }
        check_len("design matrix entries", rows * cols, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        Ok(Self {
            seed,
            entries: DMatrix::from_row_slice(rows, cols, data),
        })
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.entries.transpose().as_slice().to_vec()
    }

    /// `Φx`.
    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_len("signal", self.cols(), x.len())?;
        Ok(&self.entries * DVector::from_column_slice(x))
    }

    /// Copy of the columns listed in `indices`, in that order.
    pub fn select_columns(&self, indices: &[usize]) -> DMatrix<f64> {
        self.entries.select_columns(indices)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MATRIX_MAGIC)?;
        out.write_all(&(self.rows() as u64).to_le_bytes())?;
        out.write_all(&(self.cols() as u64).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for v in self.to_row_major() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "{} bytes is shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..MATRIX_MAGIC.len()] != MATRIX_MAGIC {
            return Err(Error::MalformedHeader("bad magic".into()));
        }
        let word = |i: usize| {
            let start = MATRIX_MAGIC.len() + 8 * i;
            u64::from_le_bytes(bytes[start..start + 8].try_into().unwrap())
        };
        let (rows, cols, seed) = (word(0), word(1), word(2));
        let payload_len = usize::try_from(rows)
            .ok()
            .zip(usize::try_from(cols).ok())
            .and_then(|(r, c)| r.checked_mul(c))
            .and_then(|count| count.checked_mul(8))
            .ok_or_else(|| Error::MalformedHeader(format!("dimensions {rows}x{cols} overflow")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < payload_len {
            return Err(Error::TruncatedPayload {
                expected: payload_len,
                found: payload.len(),
            });
        }
        if payload.len() > payload_len {
            return Err(Error::MalformedHeader(format!(
                "{} trailing bytes after payload",
                payload.len() - payload_len
            )));
        }
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_row_major(rows as usize, cols as usize, &data, seed)
    }
}

/// Standard normal draws via Box-Muller over a ChaCha20 stream.
struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on `(0, 1]` with 53 bits of resolution.
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let radius = (-2.0 * self.uniform().ln()).sqrt();
        let angle = std::f64::consts::TAU * self.uniform();
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRole {
    Background,
    Frame,
    Foreground,
}

/// A vectorized image: the background `b`, a frame `v_k`, or a signed
/// foreground `f_k = v_k - b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVector {
    values: Vec<f64>,
    role: FrameRole,
}

impl FrameVector {
    /// Background and frame intensities must lie in `[0, 255]`; foreground
    /// values are signed and only need to be finite.
    pub fn new(values: Vec<f64>, role: FrameRole) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("frame vector"));
        }
        for &v in &values {
            if !v.is_finite() {
                return Err(Error::NonFinite("frame vector"));
            }
            if role != FrameRole::Foreground && !(0.0..=255.0).contains(&v) {
                return Err(Error::OutOfRange {
                    what: "frame intensity",
                    value: v,
                });
            }
        }
        Ok(Self { values, role })
    }

    pub fn background(values: Vec<f64>) -> Result<Self> {
        Self::new(values, FrameRole::Background)
    }

    pub fn frame(values: Vec<f64>) -> Result<Self> {
        Self::new(values, FrameRole::Frame)
    }

    pub fn foreground(values: Vec<f64>) -> Result<Self> {
        Self::new(values, FrameRole::Foreground)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn role(&self) -> FrameRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Compressed observation `g_k` of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: DVector<f64>,
    pub frame_index: usize,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>, frame_index: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement vector"));
        }
        Ok(Self {
            values: DVector::from_vec(values),
            frame_index,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }
}

/// Acquisition-side compression `g = Φv - Φb`.
pub fn compress(
    phi: &DesignMatrix,
    frame: &FrameVector,
    background: &FrameVector,
    frame_index: usize,
) -> Result<MeasurementVector> {
    check_len("background", phi.cols(), background.len())?;
    let projected_background = phi.apply(background.values())?;
    compress_against(phi, frame, &projected_background, frame_index)
}

/// Same as [`compress`] with a precomputed `Φb`, which a camera would
/// measure once and reuse for every frame.
pub fn compress_against(
    phi: &DesignMatrix,
    frame: &FrameVector,
    projected_background: &DVector<f64>,
    frame_index: usize,
) -> Result<MeasurementVector> {
    check_len("frame", phi.cols(), frame.len())?;
    check_len("projected background", phi.rows(), projected_background.len())?;
    let values = phi.apply(frame.values())? - projected_background;
    MeasurementVector::new(values.data.into(), frame_index)
}
