//! Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
//! evaluated at every position where the window fits inside the image.

use crate::error::{Error, Result};
use crate::tensor_io::ImageTensor;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

// Separable "valid" filtering of one plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = taps
                .iter()
                .zip(&row[c..c + WINDOW])
                .map(|(k, v)| k * v)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, k)| k * horiz[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

fn plane(t: &ImageTensor, ch: usize) -> Vec<f64> {
    t.data()
        .iter()
        .skip(ch)
        .step_by(t.channels())
        .map(|&v| v as f64)
        .collect()
}

pub fn ssim(a: &ImageTensor, b: &ImageTensor, data_range: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "data_range must be > 0, got {data_range}"
        )));
    }
    let (h, w, chans) = a.shape();
    if h < WINDOW || w < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {WINDOW}x{WINDOW} pixels, got {h}x{w}"
        )));
    }
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);
    let taps = gaussian_taps();
    let mut total = 0.0;
    for ch in 0..chans {
        let (pa, pb) = (plane(a, ch), plane(b, ch));
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&pa, h, w, &taps);
        let mu_b = filter_valid(&pb, h, w, &taps);
        let e_aa = filter_valid(&aa, h, w, &taps);
        let e_bb = filter_valid(&bb, h, w, &taps);
        let e_ab = filter_valid(&ab, h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / chans as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn noise_image(h: usize, w: usize, sd: f64, seed: u64) -> ImageTensor {
        let mut r = rng::stream(seed, 0);
        let v: Vec<f64> = (0..h * w).map(|_| sd * rng::normal(&mut r)).collect();
        ImageTensor::from_f64(h, w, 1, &v, (-1.0, 1.0)).unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let a = noise_image(24, 20, 0.5, 1);
        assert!((ssim(&a, &a, 2.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negation_scores_lower() {
        let a = noise_image(24, 24, 0.5, 2);
        let neg = a.with_data(a.data().iter().map(|v| -v).collect()).unwrap();
        let s = ssim(&a, &neg, 2.0).unwrap();
        assert!(s < 1.0 && s < ssim(&a, &a, 2.0).unwrap());
        assert!(s >= -1.0);
    }

    #[test]
    fn symmetric() {
        let a = noise_image(16, 30, 0.5, 3);
        let b = noise_image(16, 30, 0.5, 4);
        assert!((ssim(&a, &b, 2.0).unwrap() - ssim(&b, &a, 2.0).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn errors() {
        let a = noise_image(16, 16, 0.5, 3);
        let b = noise_image(16, 15, 0.5, 3);
        assert!(ssim(&a, &b, 2.0).is_err());
        assert!(ssim(&a, &a, 0.0).is_err());
        let small = noise_image(8, 8, 0.5, 3);
        assert!(ssim(&small, &small, 2.0).is_err());
    }

    #[test]
    fn taps_normalized() {
        let k = gaussian_taps();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((k[0] - k[10]).abs() < 1e-18);
    }
}
