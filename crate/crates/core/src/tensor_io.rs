//! Image container and the `BRSTNSR1` / PGM file formats.
//!
//! Layout of a `BRSTNSR1` file (all fields little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 8    | magic `BRSTNSR1`           |
//! | 8      | 12   | `u32` height, width, chans |
//! | 20     | 8    | `f32` range_min, range_max |
//! | 28     | 4·n  | `f32` data, row-major      |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BRSTNSR1";
pub const HEADER_LEN: usize = 28;

/// Rectangular region of interest, used to restrict metrics to a bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// A 2-D float image (row-major, channel-interleaved) with a nominal intensity range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    range_min: f32,
    range_max: f32,
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        range: (f32, f32),
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ZeroDimension {
                height: height as u32,
                width: width as u32,
                channels: channels as u32,
            });
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidTensor(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if !(range.0.is_finite() && range.1.is_finite() && range.0 < range.1) {
            return Err(Error::InvalidTensor(format!(
                "range [{}, {}] must be finite with min < max",
                range.0, range.1
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            range_min: range.0,
            range_max: range.1,
        })
    }

    /// Builds a tensor from f64 values, rounding each to f32.
    pub fn from_f64(
        height: usize,
        width: usize,
        channels: usize,
        data: &[f64],
        range: (f32, f32),
    ) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            data.iter().map(|&v| v as f32).collect(),
            range,
        )
    }

    pub fn filled(height: usize, width: usize, value: f32, range: (f32, f32)) -> Result<Self> {
        Self::new(height, width, 1, vec![value; height * width], range)
    }

    pub fn zeros_like(other: &ImageTensor) -> Self {
        Self {
            data: vec![0.0; other.data.len()],
            ..other.clone()
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn range(&self) -> (f32, f32) {
        (self.range_min, self.range_max)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Value at (row, col) of channel 0.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels]
    }

    /// Same shape and range, new values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.channels,
            data,
            (self.range_min, self.range_max),
        )
    }

    pub fn with_f64(&self, data: &[f64]) -> Result<Self> {
        Self::from_f64(
            self.height,
            self.width,
            self.channels,
            data,
            (self.range_min, self.range_max),
        )
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn crop(&self, roi: Roi) -> Result<Self> {
        if roi.height == 0
            || roi.width == 0
            || roi.row + roi.height > self.height
            || roi.col + roi.width > self.width
        {
            return Err(Error::InvalidArgument(format!(
                "roi {roi:?} outside {}x{} image",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(roi.height * roi.width * c);
        for r in roi.row..roi.row + roi.height {
            let start = (r * self.width + roi.col) * c;
            data.extend_from_slice(&self.data[start..start + roi.width * c]);
        }
        Self::new(
            roi.height,
            roi.width,
            c,
            data,
            (self.range_min, self.range_max),
        )
    }

    pub fn transpose(&self) -> Self {
        let c = self.channels;
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.height {
            for col in 0..self.width {
                for ch in 0..c {
                    data[(col * self.height + r) * c + ch] =
                        self.data[(r * self.width + col) * c + ch];
                }
            }
        }
        Self {
            height: self.width,
            width: self.height,
            data,
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        for dim in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.range_min.to_le_bytes());
        out.extend_from_slice(&self.range_max.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let (height, width, channels) = (u32_at(8), u32_at(12), u32_at(16));
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ZeroDimension {
                height,
                width,
                channels,
            });
        }
        let count = height as usize * width as usize * channels as usize;
        let expected = HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after payload",
                path.display(),
                bytes.len() - expected
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(
            height as usize,
            width as usize,
            channels as usize,
            data,
            (f32_at(20), f32_at(24)),
        )
    }
}

pub fn write_tensor(t: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = t.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ImageTensor::from_bytes(&bytes, path)
}

/// Maps a value into an 8-bit gray level through a display window.
#[inline]
pub fn display_level(v: f32, display_min: f32, display_max: f32) -> u8 {
    let x = (v as f64 - display_min as f64) / (display_max as f64 - display_min as f64);
    (255.0 * x.clamp(0.0, 1.0) + 0.5).floor() as u8
}

pub fn pgm_bytes(t: &ImageTensor, display_min: f32, display_max: f32) -> Result<Vec<u8>> {
    if t.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "PGM export needs a single channel, got {}",
            t.channels()
        )));
    }
    if !(display_min < display_max) {
        return Err(Error::InvalidArgument(format!(
            "display window [{display_min}, {display_max}] is empty"
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", t.width(), t.height()).into_bytes();
    out.extend(
        t.data()
            .iter()
            .map(|&v| display_level(v, display_min, display_max)),
    );
    Ok(out)
}

pub fn export_pgm(
    t: &ImageTensor,
    path: impl AsRef<Path>,
    display_min: f32,
    display_max: f32,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = pgm_bytes(t, display_min, display_max)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
