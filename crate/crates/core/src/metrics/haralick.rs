//! Gray-level co-occurrence matrices and the 13 classic Haralick texture
//! features.
//!
//! Gray levels are 0-based. Entropy-type sums skip zero-probability cells,
//! so `0·log 0` contributes 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::ImageTensor;

pub const FEATURE_COUNT: usize = 13;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "angular_second_moment",
    "contrast",
    "correlation",
    "sum_of_squares_variance",
    "inverse_difference_moment",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "info_measure_correlation_1",
    "info_measure_correlation_2",
];

/// Added to reference feature magnitudes when normalizing distances.
pub const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlcmConfig {
    pub levels: usize,
    /// `(row, col)` displacements.
    pub offsets: Vec<(isize, isize)>,
    pub window: (f64, f64),
    pub symmetric: bool,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        Self {
            levels: 32,
            offsets: vec![(0, 1), (1, 0), (1, 1), (1, -1)],
            window: (-1.0, 1.0),
            symmetric: true,
        }
    }
}

impl GlcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidArgument(format!(
                "GLCM needs >= 2 levels, got {}",
                self.levels
            )));
        }
        if !(self.window.0 < self.window.1) {
            return Err(Error::InvalidArgument(format!(
                "GLCM window [{}, {}] is empty",
                self.window.0, self.window.1
            )));
        }
        if self.offsets.is_empty() {
            return Err(Error::InvalidArgument(
                "GLCM needs at least one offset".into(),
            ));
        }
        Ok(())
    }

    pub fn quantize(&self, v: f64) -> usize {
        let (lo, hi) = self.window;
        let x = (v.clamp(lo, hi) - lo) / (hi - lo);
        ((x * self.levels as f64).floor() as usize).min(self.levels - 1)
    }
}

/// Normalized `levels × levels` co-occurrence matrix (row-major), one per offset.
pub fn glcm(img: &ImageTensor, cfg: &GlcmConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if img.channels() != 1 {
        return Err(Error::InvalidArgument(
            "GLCM needs a single-channel image".into(),
        ));
    }
    let (h, w) = (img.height() as isize, img.width() as isize);
    let l = cfg.levels;
    let q: Vec<usize> = img.data().iter().map(|&v| cfg.quantize(v as f64)).collect();
    cfg.offsets
        .iter()
        .map(|&(dr, dc)| {
            let mut m = vec![0.0; l * l];
            let mut pairs = 0usize;
            for r in 0..h {
                let r2 = r + dr;
                if r2 < 0 || r2 >= h {
                    continue;
                }
                for c in 0..w {
                    let c2 = c + dc;
                    if c2 < 0 || c2 >= w {
                        continue;
                    }
                    let i = q[(r * w + c) as usize];
                    let j = q[(r2 * w + c2) as usize];
                    m[i * l + j] += 1.0;
                    if cfg.symmetric {
                        m[j * l + i] += 1.0;
                    }
                    pairs += 1;
                }
            }
            if pairs == 0 {
                return Err(Error::InvalidArgument(format!(
                    "offset ({dr}, {dc}) has no pixel pairs in a {h}x{w} image"
                )));
            }
            let total: f64 = m.iter().sum();
            m.iter_mut().for_each(|v| *v /= total);
            Ok(m)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaralickVector(pub [f64; FEATURE_COUNT]);

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// The 13 features of one normalized co-occurrence matrix.
pub fn features_of(p: &[f64], levels: usize) -> [f64; FEATURE_COUNT] {
    let l = levels;
    let mut px = vec![0.0; l];
    let mut py = vec![0.0; l];
    let mut psum = vec![0.0; 2 * l - 1];
    let mut pdiff = vec![0.0; l];
    for i in 0..l {
        for j in 0..l {
            let v = p[i * l + j];
            px[i] += v;
            py[j] += v;
            psum[i + j] += v;
            pdiff[i.abs_diff(j)] += v;
        }
    }
    let mean = |d: &[f64]| d.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>();
    let (mux, muy) = (mean(&px), mean(&py));
    let var = |d: &[f64], m: f64| {
        d.iter()
            .enumerate()
            .map(|(i, v)| (i as f64 - m).powi(2) * v)
            .sum::<f64>()
    };
    let (sx, sy) = (var(&px, mux).sqrt(), var(&py, muy).sqrt());

    let mut asm = 0.0;
    let mut eij = 0.0;
    let mut ssv = 0.0;
    let mut idm = 0.0;
    let mut hxy1 = 0.0;
    let mut hxy2 = 0.0;
    for i in 0..l {
        for j in 0..l {
            let v = p[i * l + j];
            let (fi, fj) = (i as f64, j as f64);
            asm += v * v;
            eij += fi * fj * v;
            ssv += (fi - mux).powi(2) * v;
            idm += v / (1.0 + (fi - fj).powi(2));
            let pp = px[i] * py[j];
            if v > 0.0 {
                hxy1 -= v * pp.ln();
            }
            hxy2 -= plogp(pp);
        }
    }
    let entropy = -p.iter().map(|&v| plogp(v)).sum::<f64>();
    let contrast = pdiff
        .iter()
        .enumerate()
        .map(|(k, v)| (k * k) as f64 * v)
        .sum::<f64>();
    let correlation = if sx * sy > 0.0 {
        (eij - mux * muy) / (sx * sy)
    } else {
        1.0
    };
    let sum_avg = mean(&psum);
    let sum_var = var(&psum, sum_avg);
    let sum_entropy = -psum.iter().map(|&v| plogp(v)).sum::<f64>();
    let diff_var = var(&pdiff, mean(&pdiff));
    let diff_entropy = -pdiff.iter().map(|&v| plogp(v)).sum::<f64>();
    let hx = -px.iter().map(|&v| plogp(v)).sum::<f64>();
    let hy = -py.iter().map(|&v| plogp(v)).sum::<f64>();
    let hmax = hx.max(hy);
    let imc1 = if hmax > 0.0 {
        (entropy - hxy1) / hmax
    } else {
        0.0
    };
    let imc2 = (1.0 - (-2.0 * (hxy2 - entropy)).exp()).max(0.0).sqrt();
    [
        asm,
        contrast,
        correlation,
        ssv,
        idm,
        sum_avg,
        sum_var,
        sum_entropy.max(0.0),
        entropy.max(0.0),
        diff_var,
        diff_entropy.max(0.0),
        imc1,
        imc2,
    ]
}

/// Features averaged over the configured offsets.
pub fn haralick(img: &ImageTensor, cfg: &GlcmConfig) -> Result<HaralickVector> {
    let mats = glcm(img, cfg)?;
    let mut acc = [0.0; FEATURE_COUNT];
    for m in &mats {
        for (a, f) in acc.iter_mut().zip(features_of(m, cfg.levels)) {
            *a += f;
        }
    }
    acc.iter_mut().for_each(|a| *a /= mats.len() as f64);
    Ok(HaralickVector(acc))
}

/// `sqrt(mean_i ((f_test,i − f_ref,i) / (|f_ref,i| + 1e-8))²)`.
pub fn feature_distance(test: &HaralickVector, reference: &HaralickVector) -> f64 {
    let sum: f64 = test
        .0
        .iter()
        .zip(&reference.0)
        .map(|(t, r)| ((t - r) / (r.abs() + SCALE_FLOOR)).powi(2))
        .sum();
    (sum / FEATURE_COUNT as f64).sqrt()
}

pub fn haralick_distance(
    test: &ImageTensor,
    reference: &ImageTensor,
    cfg: &GlcmConfig,
) -> Result<f64> {
    Ok(feature_distance(
        &haralick(test, cfg)?,
        &haralick(reference, cfg)?,
    ))
}
