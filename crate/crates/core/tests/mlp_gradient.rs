mod common;

use common::{gradient_check, gradient_fixture, FD_REL_TOL};
use i3sb::predictor::{MlpShape, TinyMlp, TrainBatch};
use nalgebra::{DMatrix, DVector};

#[test]
fn analytic_gradient_matches_central_differences() {
    for (shape, seed) in [
        (
            MlpShape {
                patch: 3,
                hidden: 8,
            },
            1,
        ),
        (
            MlpShape {
                patch: 1,
                hidden: 4,
            },
            2,
        ),
        (
            MlpShape {
                patch: 3,
                hidden: 0,
            },
            3,
        ),
    ] {
        let (net, batch) = gradient_fixture(shape, seed);
        let r = gradient_check(&net, &batch);
        assert!(r.max_rel < FD_REL_TOL, "{shape:?}: {r:?}");
        assert!(r.skipped * 20 <= net.param_count(), "{shape:?}: {r:?}");
    }
}

/// Least-squares fit of every output column on `[inputs, 1]`.
fn ols(batch: &TrainBatch, il: usize, ol: usize) -> Vec<(DVector<f64>, f64)> {
    let x = DMatrix::from_fn(batch.len, il + 1, |s, j| {
        if j < il {
            batch.inputs[s * il + j]
        } else {
            1.0
        }
    });
    let svd = x.clone().svd(true, true);
    (0..ol)
        .map(|o| {
            let y = DVector::from_fn(batch.len, |s, _| batch.targets[s * ol + o]);
            let beta = svd.solve(&y, 1e-12).unwrap();
            (beta.rows(0, il).into_owned(), beta[il])
        })
        .collect()
}

#[test]
fn linear_model_gradient_vanishes_at_least_squares_fit() {
    let shape = MlpShape {
        patch: 3,
        hidden: 0,
    };
    let (init, batch) = gradient_fixture(shape, 9);
    let (il, ol) = (shape.input_len(), shape.patch_len());
    let fit = ols(&batch, il, ol);

    let mut net = TinyMlp::zeros(shape).unwrap();
    for (o, (w, b)) in fit.iter().enumerate() {
        for j in 0..il {
            net.set_param(o * il + j, w[j] as f32);
        }
        net.set_param(il * ol + o, *b as f32);
    }
    let (w, b) = net.linear_params().unwrap();
    assert_eq!((w.len(), b.len()), (il * ol, ol));

    let (loss_fit, g_fit) = net.batch_loss_and_grad(&batch);
    let (loss_init, g_init) = init.batch_loss_and_grad(&batch);
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(loss_fit < loss_init);
    assert!(
        norm(&g_fit) < 1e-3 * norm(&g_init),
        "{} vs {}",
        norm(&g_fit),
        norm(&g_init)
    );
}
