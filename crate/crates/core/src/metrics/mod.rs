//! Image fidelity metrics: SSIM, normalized Haralick feature distance and RMSE.
//!
//! The `*_in` variants restrict evaluation to a rectangular region of
//! interest by cropping both images first.

mod haralick;
mod ssim;

pub use haralick::{
    feature_distance, features_of, glcm, haralick, haralick_distance, GlcmConfig, HaralickVector,
    FEATURE_COUNT, FEATURE_NAMES, SCALE_FLOOR,
};
pub use ssim::{gaussian_taps, ssim, K1, K2, WINDOW, WINDOW_SIGMA};

use crate::error::Result;
use crate::tensor_io::{ImageTensor, Roi};

pub fn rmse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

fn crop_pair(
    a: &ImageTensor,
    b: &ImageTensor,
    roi: Option<Roi>,
) -> Result<(ImageTensor, ImageTensor)> {
    a.ensure_same_shape(b)?;
    match roi {
        Some(r) => Ok((a.crop(r)?, b.crop(r)?)),
        None => Ok((a.clone(), b.clone())),
    }
}

pub fn ssim_in(a: &ImageTensor, b: &ImageTensor, data_range: f64, roi: Option<Roi>) -> Result<f64> {
    let (a, b) = crop_pair(a, b, roi)?;
    ssim(&a, &b, data_range)
}

pub fn haralick_distance_in(
    test: &ImageTensor,
    reference: &ImageTensor,
    cfg: &GlcmConfig,
    roi: Option<Roi>,
) -> Result<f64> {
    let (t, r) = crop_pair(test, reference, roi)?;
    haralick_distance(&t, &r, cfg)
}

pub fn rmse_in(a: &ImageTensor, b: &ImageTensor, roi: Option<Roi>) -> Result<f64> {
    let (a, b) = crop_pair(a, b, roi)?;
    rmse(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{apply, make_toy_dataset, DegradeKind, DegradeSpec, ToyKind};
    use crate::rng;

    fn t(h: usize, w: usize, v: Vec<f32>) -> ImageTensor {
        ImageTensor::new(h, w, 1, v, (-1.0, 1.0)).unwrap()
    }

    #[test]
    fn rmse_examples() {
        let z = t(4, 4, vec![0.0; 16]);
        assert_eq!(rmse(&z, &z).unwrap(), 0.0);
        assert_eq!(rmse(&z, &t(4, 4, vec![1.0; 16])).unwrap(), 1.0);
        let alt: Vec<f32> = (0..16)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert_eq!(rmse(&z, &t(4, 4, alt)).unwrap(), 1.0);
        assert!(rmse(&z, &t(2, 8, vec![0.0; 16])).is_err());
    }

    // Direct double loop over every window with the 2-D weights spelled out.
    #[allow(clippy::needless_range_loop)]
    fn ssim_reference(a: &ImageTensor, b: &ImageTensor, range: f64) -> f64 {
        let (h, w) = (a.height(), a.width());
        let mut g = [[0.0f64; 11]; 11];
        let mut norm = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                norm += *v;
            }
        }
        let c1 = (0.01 * range) * (0.01 * range);
        let c2 = (0.03 * range) * (0.03 * range);
        let mut total = 0.0;
        let mut count = 0.0;
        for r in 0..=h - 11 {
            for c in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / norm;
                        let x = a.at(r + i, c + j) as f64;
                        let y = b.at(r + i, c + j) as f64;
                        ma += wgt * x;
                        mb += wgt * y;
                        saa += wgt * x * x;
                        sbb += wgt * y * y;
                        sab += wgt * x * y;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                total += num / den;
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_reference_on_noise() {
        let a = t(32, 32, vec![0.0; 1024]);
        let mut r = rng::stream(17, 0);
        let v: Vec<f64> = (0..1024).map(|_| 0.1 * rng::normal(&mut r)).collect();
        let b = a.with_f64(&v).unwrap();
        let fast = ssim(&a, &b, 2.0).unwrap();
        let slow = ssim_reference(&a, &b, 2.0);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        assert!(fast < 1.0);
    }

    #[test]
    fn ssim_matches_reference_on_textures() {
        let imgs = make_toy_dataset(ToyKind::TextureField, 4, 24, 3).unwrap();
        for pair in imgs.chunks(2) {
            let fast = ssim(&pair[0], &pair[1], 2.0).unwrap();
            let slow = ssim_reference(&pair[0], &pair[1], 2.0);
            assert!((fast - slow).abs() < 1e-6);
        }
    }

    #[test]
    fn haralick_distance_monotone_in_corruption() {
        let cfg = GlcmConfig::default();
        let clean = make_toy_dataset(ToyKind::TextureField, 1, 64, 11)
            .unwrap()
            .remove(0);
        let noisy = apply(
            &DegradeSpec {
                kind: DegradeKind::GaussianNoise,
                noise_sigma: 0.3,
                seed: 5,
            },
            &clean,
        )
        .unwrap();
        let mut r = rng::stream(6, 0);
        let tiny: Vec<f64> = clean
            .data()
            .iter()
            .map(|&v| v as f64 + 1e-3 * rng::normal(&mut r))
            .collect();
        let nudged = clean.with_f64(&tiny).unwrap();
        let far = haralick_distance(&noisy, &clean, &cfg).unwrap();
        let near = haralick_distance(&nudged, &clean, &cfg).unwrap();
        assert!(far > near, "{far} <= {near}");
    }

    #[test]
    fn roi_variants_crop() {
        let imgs = make_toy_dataset(ToyKind::CheckerBlobs, 2, 32, 1).unwrap();
        let roi = Roi {
            row: 4,
            col: 6,
            height: 16,
            width: 20,
        };
        let (a, b) = (&imgs[0], &imgs[1]);
        let direct = ssim(&a.crop(roi).unwrap(), &b.crop(roi).unwrap(), 2.0).unwrap();
        assert_eq!(ssim_in(a, b, 2.0, Some(roi)).unwrap(), direct);
        assert_eq!(ssim_in(a, b, 2.0, None).unwrap(), ssim(a, b, 2.0).unwrap());
        assert_eq!(rmse_in(a, a, Some(roi)).unwrap(), 0.0);
        assert_eq!(
            haralick_distance_in(a, a, &GlcmConfig::default(), Some(roi)).unwrap(),
            0.0
        );
    }
}
