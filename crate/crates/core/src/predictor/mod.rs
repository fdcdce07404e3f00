//! ε-predictors: models of `(X_t − X_0)/σ_t` given the current state, the
//! time point and the condition `y`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::schedule::StepQuery;

pub mod mlp;

pub use mlp::{
    draw_batch, mlp_predict, train_tiny_mlp, train_tiny_mlp_with, MlpShape, TinyMlp, TrainBatch,
    TrainHyper, TrainReport,
};

/// Conditioning information: the corrupted image plus optional named extras.
#[derive(Debug, Clone)]
pub struct Condition {
    pub xn: Field,
    pub extras: BTreeMap<String, Field>,
}

impl Condition {
    pub fn new(xn: Field) -> Self {
        Self {
            xn,
            extras: BTreeMap::new(),
        }
    }
}

pub trait EpsilonPredictor: Send + Sync {
    /// Returns the predicted `(x_t − X_0)/σ_t`, same shape as `x_t`.
    fn predict(&self, x_t: &Field, q: &StepQuery, cond: &Condition) -> Result<Field>;
}

impl<P: EpsilonPredictor + ?Sized> EpsilonPredictor for &P {
    fn predict(&self, x_t: &Field, q: &StepQuery, cond: &Condition) -> Result<Field> {
        (**self).predict(x_t, q, cond)
    }
}

impl<P: EpsilonPredictor + ?Sized> EpsilonPredictor for Box<P> {
    fn predict(&self, x_t: &Field, q: &StepQuery, cond: &Condition) -> Result<Field> {
        (**self).predict(x_t, q, cond)
    }
}

fn sigma_of(q: &StepQuery) -> Result<f64> {
    if !(q.sigma2 > 0.0) {
        return Err(Error::ZeroSigma { n: q.n });
    }
    Ok(q.sigma2.sqrt())
}

/// Knows the true clean image; makes x̂₀ exact at every step.
#[derive(Debug, Clone)]
pub struct CheatOracle {
    x0: Field,
}

pub fn cheat_oracle(x0_true: Field) -> CheatOracle {
    CheatOracle { x0: x0_true }
}

impl EpsilonPredictor for CheatOracle {
    fn predict(&self, x_t: &Field, q: &StepQuery, _cond: &Condition) -> Result<Field> {
        x_t.ensure_same_shape(&self.x0)?;
        let sigma = sigma_of(q)?;
        let data = x_t
            .data()
            .iter()
            .zip(self.x0.data())
            .map(|(x, x0)| (x - x0) / sigma)
            .collect();
        Field::new(x_t.shape(), data)
    }
}

/// Per-pixel generative model `X_0 ~ N(mu0, s0sq)`, `X_1 = X_0 + η`, `η ~ N(0, s1sq)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPairModel {
    pub mu0: f64,
    pub s0sq: f64,
    pub s1sq: f64,
}

impl GaussianPairModel {
    pub fn new(mu0: f64, s0sq: f64, s1sq: f64) -> Result<Self> {
        if !(s0sq > 0.0 && s1sq > 0.0 && mu0.is_finite() && s0sq.is_finite() && s1sq.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pair model variances must be positive and finite (s0sq={s0sq}, s1sq={s1sq})"
            )));
        }
        Ok(Self { mu0, s0sq, s1sq })
    }

    /// `(E[X_0 | X_1 = x1], Var[X_0 | X_1])`.
    pub fn x0_given_x1(&self, x1: f64) -> (f64, f64) {
        let tot = self.s0sq + self.s1sq;
        (
            (self.mu0 * self.s1sq + x1 * self.s0sq) / tot,
            self.s0sq * self.s1sq / tot,
        )
    }

    /// `E[X_0 | X_t = xt, X_1 = x1]` when `X_t` is drawn from the bridge
    /// marginal with accumulated variances `sigma2`, `sbar2`.
    ///
    /// Given `X_1`, the prior on `X_0` is `N(m1, v1)` and the bridge gives
    /// `X_t = w0·X_0 + w1·x1 + √v·z`, a linear observation of `X_0`; the
    /// posterior mean is the precision-weighted combination
    /// `(m1·v + w0·(xt − w1·x1)·v1) / (v + w0²·v1)`.
    pub fn x0_posterior_mean(&self, xt: f64, x1: f64, sigma2: f64, sbar2: f64) -> f64 {
        let (m1, v1) = self.x0_given_x1(x1);
        if sbar2 == 0.0 {
            return m1;
        }
        if sigma2 == 0.0 {
            return xt;
        }
        let tot = sigma2 + sbar2;
        let (w0, w1, v) = (sbar2 / tot, sigma2 / tot, sigma2 * sbar2 / tot);
        (m1 * v + w0 * (xt - w1 * x1) * v1) / (v + w0 * w0 * v1)
    }
}

/// The minimizer of the ε-regression loss under [`GaussianPairModel`].
#[derive(Debug, Clone, Copy)]
pub struct AnalyticOracle {
    pub model: GaussianPairModel,
}

pub fn gaussian_analytic_oracle(model: GaussianPairModel) -> AnalyticOracle {
    AnalyticOracle { model }
}

impl EpsilonPredictor for AnalyticOracle {
    fn predict(&self, x_t: &Field, q: &StepQuery, cond: &Condition) -> Result<Field> {
        x_t.ensure_same_shape(&cond.xn)?;
        let sigma = sigma_of(q)?;
        let data = x_t
            .data()
            .iter()
            .zip(cond.xn.data())
            .map(|(&xt, &x1)| {
                (xt - self.model.x0_posterior_mean(xt, x1, q.sigma2, q.sbar2)) / sigma
            })
            .collect();
        Field::new(x_t.shape(), data)
    }
}
