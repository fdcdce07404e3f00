//! Synthetic corruption operators and toy image generators.
//!
//! `GaussianNoise` stands in for low-dose acquisition, `Downsample4x` for
//! low-resolution acquisition. Corrupted images always live on the clean grid.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor_io::ImageTensor;

pub const WORKING_RANGE: (f32, f32) = (-1.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradeKind {
    GaussianNoise,
    Downsample4x,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeSpec {
    pub kind: DegradeKind,
    #[serde(default)]
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

pub fn apply(spec: &DegradeSpec, x0: &ImageTensor) -> Result<ImageTensor> {
    apply_stream(spec, x0, 0)
}

/// [`apply`] drawing noise from stream `stream` of the spec's seed, so each
/// dataset item gets independent, reproducible noise.
pub fn apply_stream(spec: &DegradeSpec, x0: &ImageTensor, stream: u64) -> Result<ImageTensor> {
    spec.validate()?;
    match spec.kind {
        DegradeKind::GaussianNoise => {
            if spec.noise_sigma == 0.0 {
                return Ok(x0.clone());
            }
            let mut r = rng::stream(spec.seed, stream);
            let data = x0
                .data()
                .iter()
                .map(|&v| (v as f64 + spec.noise_sigma * rng::normal(&mut r)) as f32)
                .collect();
            x0.with_data(data)
        }
        DegradeKind::Downsample4x => downsample4x(x0),
    }
}

/// 4×4 block means, `(h/4) × (w/4)` per channel.
pub fn block_means(x: &ImageTensor) -> Result<Vec<f64>> {
    let (h, w, ch) = x.shape();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "4x downsampling needs height and width divisible by 4, got {h}x{w}"
        )));
    }
    let (hc, wc) = (h / 4, w / 4);
    let mut out = vec![0.0; hc * wc * ch];
    let d = x.data();
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                out[((r / 4) * wc + c / 4) * ch + k] += d[(r * w + c) * ch + k] as f64;
            }
        }
    }
    for v in &mut out {
        *v /= 16.0;
    }
    Ok(out)
}

// Half-pixel-centred linear interpolation weights for 4× upsampling along one axis.
fn upsample_axis(fine: usize, coarse: usize) -> Vec<(usize, usize, f64)> {
    (0..fine)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 4.0 - 0.5).clamp(0.0, (coarse - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(coarse - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Box-average to a 4× coarser grid, then bilinear upsampling back to the
/// original grid with a per-block offset so that every 4×4 block of the
/// result has exactly the coarse mean it came from.
pub fn downsample4x(x: &ImageTensor) -> Result<ImageTensor> {
    let coarse = block_means(x)?;
    let (h, w, ch) = x.shape();
    let (hc, wc) = (h / 4, w / 4);
    let rows = upsample_axis(h, hc);
    let cols = upsample_axis(w, wc);
    let mut up = vec![0.0f64; h * w * ch];
    for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            for k in 0..ch {
                let at = |rr: usize, cc: usize| coarse[(rr * wc + cc) * ch + k];
                let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
                let bot = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
                up[(r * w + c) * ch + k] = top * (1.0 - fr) + bot * fr;
            }
        }
    }
    let mut up_means = vec![0.0; hc * wc * ch];
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                up_means[((r / 4) * wc + c / 4) * ch + k] += up[(r * w + c) * ch + k] / 16.0;
            }
        }
    }
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                let b = ((r / 4) * wc + c / 4) * ch + k;
                up[(r * w + c) * ch + k] += coarse[b] - up_means[b];
            }
        }
    }
    x.with_f64(&up)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    /// Smoothed white Gaussian noise.
    TextureField,
    /// Checkerboard with random rectangles and disks painted over it.
    CheckerBlobs,
}

/// Passes of the `[0.25, 0.5, 0.25]` kernel applied along each axis.
pub const TEXTURE_SMOOTHING_PASSES: usize = 3;

fn smooth3(v: &mut [f64], h: usize, w: usize) {
    let mut tmp = v.to_vec();
    for r in 0..h {
        for c in 0..w {
            let l = v[r * w + c.saturating_sub(1)];
            let m = v[r * w + c];
            let rt = v[r * w + (c + 1).min(w - 1)];
            tmp[r * w + c] = 0.25 * l + 0.5 * m + 0.25 * rt;
        }
    }
    for r in 0..h {
        for c in 0..w {
            let u = tmp[r.saturating_sub(1) * w + c];
            let m = tmp[r * w + c];
            let d = tmp[(r + 1).min(h - 1) * w + c];
            v[r * w + c] = 0.25 * u + 0.5 * m + 0.25 * d;
        }
    }
}

fn rescale_unit(v: &mut [f64]) {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if hi > lo {
        for x in v.iter_mut() {
            *x = 2.0 * (*x - lo) / (hi - lo) - 1.0;
        }
    } else {
        v.fill(0.0);
    }
}

fn texture_field(size: usize, r: &mut rng::Rng) -> Vec<f64> {
    let mut v = vec![0.0; size * size];
    rng::fill_normal(r, &mut v);
    for _ in 0..TEXTURE_SMOOTHING_PASSES {
        smooth3(&mut v, size, size);
    }
    v
}

fn checker_blobs(size: usize, r: &mut rng::Rng) -> Vec<f64> {
    let cell = (size / 8).max(1);
    let mut v: Vec<f64> = (0..size * size)
        .map(|i| {
            let (row, col) = (i / size, i % size);
            if (row / cell + col / cell).is_multiple_of(2) {
                -0.3
            } else {
                0.3
            }
        })
        .collect();
    let shapes = r.random_range(4..=8);
    for _ in 0..shapes {
        let value: f64 = r.random_range(-1.0..1.0);
        let cr = r.random_range(0..size) as f64;
        let cc = r.random_range(0..size) as f64;
        let extent = r
            .random_range(size as f64 / 16.0..size as f64 / 4.0)
            .max(1.0);
        let disk = r.random_bool(0.5);
        for row in 0..size {
            for col in 0..size {
                let (dr, dc) = (row as f64 - cr, col as f64 - cc);
                let inside = if disk {
                    dr * dr + dc * dc <= extent * extent
                } else {
                    dr.abs() <= extent && dc.abs() <= 0.6 * extent
                };
                if inside {
                    v[row * size + col] = value;
                }
            }
        }
    }
    v
}

/// Clean `size × size` images in the working range [−1, 1], one random
/// stream per image.
pub fn make_toy_dataset(
    kind: ToyKind,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    if size == 0 || !size.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "toy image size must be a positive multiple of 4, got {size}"
        )));
    }
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mut v = match kind {
                ToyKind::TextureField => texture_field(size, &mut r),
                ToyKind::CheckerBlobs => checker_blobs(size, &mut r),
            };
            rescale_unit(&mut v);
            ImageTensor::from_f64(size, size, 1, &v, WORKING_RANGE)
        })
        .collect()
}

/// Pairs each clean image with its corruption; item `i` uses noise stream `i`.
pub fn make_pairs(
    clean: Vec<ImageTensor>,
    spec: &DegradeSpec,
) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    clean
        .into_iter()
        .enumerate()
        .map(|(i, x0)| {
            let x1 = apply_stream(spec, &x0, i as u64)?;
            Ok((x0, x1))
        })
        .collect()
}
