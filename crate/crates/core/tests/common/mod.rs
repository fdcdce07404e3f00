#![allow(dead_code)]

use i3sb::degrade::{make_pairs, make_toy_dataset, ToyKind};
use i3sb::predictor::{draw_batch, MlpShape, TinyMlp, TrainBatch};
use i3sb::{rng, ImageTensor, Schedule};

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;
const FD_HALVINGS: usize = 8;
/// Denominator floor for the relative error, so parameters with a vanishing
/// gradient are compared absolutely.
const FD_FLOOR: f64 = 1e-6;

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
    pub worst: usize,
}

/// Compares the analytic gradient against central differences for every
/// parameter. The difference quotient divides by the perturbation that was
/// actually stored in f32. Steps that flip any ReLU are halved; parameters
/// that still flip one after all halvings are counted as skipped.
pub fn gradient_check(net: &TinyMlp, batch: &TrainBatch) -> GradCheck {
    let (_, grad) = net.batch_loss_and_grad(batch);
    let pattern = net.relu_pattern(batch);
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        max_rel: 0.0,
        worst: 0,
    };
    for (i, &g) in grad.iter().enumerate() {
        let p = net.param(i) as f64;
        let mut h = FD_STEP * p.abs().max(1.0);
        let mut fd = None;
        for _ in 0..FD_HALVINGS {
            let (hi, lo) = ((p + h) as f32, (p - h) as f32);
            let mut plus = net.clone();
            plus.set_param(i, hi);
            let mut minus = net.clone();
            minus.set_param(i, lo);
            if plus.relu_pattern(batch) != pattern || minus.relu_pattern(batch) != pattern {
                h *= 0.5;
                continue;
            }
            let d = (plus.batch_loss(batch) - minus.batch_loss(batch)) / (hi as f64 - lo as f64);
            fd = Some(d);
            break;
        }
        match fd {
            Some(d) => {
                let rel = (d - g).abs() / d.abs().max(g.abs()).max(FD_FLOOR);
                if rel > out.max_rel {
                    out.max_rel = rel;
                    out.worst = i;
                }
                out.checked += 1;
            }
            None => out.skipped += 1,
        }
    }
    out
}

pub fn toy_pairs(count: usize, size: usize, seed: u64) -> Vec<(ImageTensor, ImageTensor)> {
    let clean = make_toy_dataset(ToyKind::TextureField, count, size, seed).unwrap();
    make_pairs(
        clean,
        &i3sb::config::ExperimentConfig::default().degrade_spec(),
    )
    .unwrap()
}

pub fn gradient_fixture(shape: MlpShape, seed: u64) -> (TinyMlp, TrainBatch) {
    let data = toy_pairs(4, 16, seed);
    let s = Schedule::training(Default::default()).unwrap();
    let mut r = rng::stream(seed, 99);
    let batch = draw_batch(&data, &s, shape, 48, None, &mut r).unwrap();
    (TinyMlp::init(shape, seed).unwrap(), batch)
}

/// Gaussian-window SSIM written as a plain double loop over valid windows.
#[allow(clippy::needless_range_loop)]
pub fn ssim_reference(a: &ImageTensor, b: &ImageTensor, range: f64) -> f64 {
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
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}

/// Uniform random image on [−1, 1].
pub fn random_image(size: usize, seed: u64, stream: u64) -> ImageTensor {
    use rand::Rng as _;
    let mut r = rng::stream(seed, stream);
    let v: Vec<f32> = (0..size * size)
        .map(|_| r.random_range(-1.0f32..1.0))
        .collect();
    ImageTensor::new(size, size, 1, v, (-1.0, 1.0)).unwrap()
}
