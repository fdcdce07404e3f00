//! Closed-form Gaussian distributions of the bridge.
//!
//! * bridge marginal `q(X_n | X_0, X_N)`
//! * Markovian one-step posterior `p(X_n | X_0, X_{n+1})`
//! * generalized posterior `p_G(X_n | X_0, X_{n+1}, X_N)` with mean
//!   `A_n X_0 + B_n X_{n+1} + C_n X_N` and free variance `g_n²`
//!
//! The generalized coefficients are the unique choice for which
//! composing `p_G` with `q(X_{n+1} | X_0, X_N)` reproduces `q(X_n | X_0, X_N)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::rng::{self, Rng};
use crate::schedule::Schedule;

/// Radicands in `[-RADICAND_TOL·σ_n²σ̄_n², 0)` are treated as rounding noise.
pub const RADICAND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: Field,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub g2: f64,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GnPolicy {
    /// `g_n` equal to the Markovian posterior's standard deviation; reproduces I²SB.
    I2sbEquivalent,
    /// `k_n = 0` for `n/N <= r`, else 1.
    StepFunction { r: f64 },
    /// Per-step multipliers `k_n ∈ [0, 1]`; `table[n - 1]` applies to step `n`.
    CustomTable { table: Vec<f64> },
}

impl GnPolicy {
    pub fn validate(&self, steps: usize) -> Result<()> {
        match self {
            GnPolicy::I2sbEquivalent => Ok(()),
            GnPolicy::StepFunction { r } if !(0.0..=1.0).contains(r) => Err(
                Error::InvalidArgument(format!("step-function threshold r = {r} outside [0, 1]")),
            ),
            GnPolicy::StepFunction { .. } => Ok(()),
            GnPolicy::CustomTable { table } => {
                if table.len() != steps.saturating_sub(1) {
                    return Err(Error::InvalidArgument(format!(
                        "custom g table has {} entries, expected N - 1 = {}",
                        table.len(),
                        steps.saturating_sub(1)
                    )));
                }
                if let Some(k) = table.iter().find(|k| !(0.0..=1.0).contains(*k)) {
                    return Err(Error::InvalidArgument(format!(
                        "custom g multiplier {k} outside [0, 1]"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            GnPolicy::I2sbEquivalent => "i2sb".into(),
            GnPolicy::StepFunction { r } => format!("i3sb_r{r}"),
            GnPolicy::CustomTable { .. } => "custom".into(),
        }
    }
}

fn check_step(s: &Schedule, n: usize, lo: usize, hi: usize) -> Result<()> {
    if n < lo || n > hi || hi > s.steps() {
        return Err(Error::StepOutOfRange { n, lo, hi });
    }
    Ok(())
}

/// `(weight of X_0, weight of X_N, variance)` of the bridge marginal at step n.
pub fn q_weights(s: &Schedule, n: usize) -> Result<(f64, f64, f64)> {
    check_step(s, n, 0, s.steps())?;
    let (sig2, sbar2) = (s.sigma2(n), s.sbar2(n));
    if n == 0 {
        return Ok((1.0, 0.0, 0.0));
    }
    if n == s.steps() {
        return Ok((0.0, 1.0, 0.0));
    }
    let tot = sig2 + sbar2;
    Ok((sbar2 / tot, sig2 / tot, sig2 * sbar2 / tot))
}

pub fn q_marginal(s: &Schedule, n: usize, x0: &Field, xn: &Field) -> Result<GaussianSpec> {
    x0.ensure_same_shape(xn)?;
    let (w0, wn, variance) = q_weights(s, n)?;
    let mean = match n {
        0 => x0.clone(),
        _ if n == s.steps() => xn.clone(),
        _ => Field::combine(&[(w0, x0), (wn, xn)])?,
    };
    Ok(GaussianSpec { mean, variance })
}

/// `(weight of x̂_0, weight of X_{n+1}, variance)` of the Markovian posterior.
pub fn ddpm_weights(s: &Schedule, n: usize) -> Result<(f64, f64, f64)> {
    check_step(s, n, 0, s.steps() - 1)?;
    if n == 0 {
        return Ok((1.0, 0.0, 0.0));
    }
    let (sig2, a2) = (s.sigma2(n), s.alpha2(n));
    let tot = sig2 + a2;
    Ok((a2 / tot, sig2 / tot, sig2 * a2 / tot))
}

pub fn ddpm_posterior(
    s: &Schedule,
    n: usize,
    x0_hat: &Field,
    x_next: &Field,
) -> Result<GaussianSpec> {
    x0_hat.ensure_same_shape(x_next)?;
    let (wa, wb, variance) = ddpm_weights(s, n)?;
    let mean = if n == 0 {
        x0_hat.clone()
    } else {
        Field::combine(&[(wa, x0_hat), (wb, x_next)])?
    };
    Ok(GaussianSpec { mean, variance })
}

/// Largest admissible `g_n`: the standard deviation of `q(X_n | X_0, X_N)`.
pub fn gn_bound(s: &Schedule, n: usize) -> f64 {
    s.q_variance(n).sqrt()
}

/// The `g_n` that makes the generalized posterior coincide with the Markovian one.
pub fn gn_markov(s: &Schedule, n: usize) -> f64 {
    let (sig2, a2) = (s.sigma2(n), s.alpha2(n));
    if sig2 == 0.0 {
        return 0.0;
    }
    (sig2 * a2 / (sig2 + a2)).sqrt()
}

pub fn gn_value(s: &Schedule, n: usize, policy: &GnPolicy) -> Result<f64> {
    let steps = s.steps();
    if steps < 2 {
        return Err(Error::StepOutOfRange { n, lo: 1, hi: 0 });
    }
    check_step(s, n, 1, steps - 1)?;
    let base = gn_markov(s, n);
    let k = match policy {
        GnPolicy::I2sbEquivalent => 1.0,
        GnPolicy::StepFunction { r } => {
            if (n as f64) / (steps as f64) <= *r {
                0.0
            } else {
                1.0
            }
        }
        GnPolicy::CustomTable { table } => {
            policy.validate(steps)?;
            table[n - 1]
        }
    };
    let g = k * base;
    let bound = gn_bound(s, n);
    // α_n² ≤ σ̄_n² makes this hold analytically.
    assert!(
        g <= bound * (1.0 + 1e-12),
        "g_n = {g} exceeds feasibility bound {bound} at step {n}"
    );
    Ok(g)
}

pub fn pg_coeffs(s: &Schedule, n: usize, g: f64) -> Result<PosteriorCoeffs> {
    pg_coeffs_perturbed(s, n, g, [0.0; 3])
}

/// [`pg_coeffs`] with `A`, `B`, `C` scaled by `1 + rel[i]`. Zero perturbation is
/// the exact formula; anything else exists for mutation testing of the
/// identity checks.
#[doc(hidden)]
pub fn pg_coeffs_perturbed(
    s: &Schedule,
    n: usize,
    g: f64,
    rel: [f64; 3],
) -> Result<PosteriorCoeffs> {
    let steps = s.steps();
    if n >= 1 && n + 1 == steps {
        return Err(Error::SingularLastStep { n });
    }
    if steps < 3 {
        return Err(Error::StepOutOfRange { n, lo: 1, hi: 0 });
    }
    check_step(s, n, 1, steps - 2)?;
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "g must be finite and >= 0, got {g}"
        )));
    }
    let (sig2, sbar2) = (s.sigma2(n), s.sbar2(n));
    let (sig2_next, sbar2_next) = (s.sigma2(n + 1), s.sbar2(n + 1));
    let tot = sig2 + sbar2;
    let tot_next = sig2_next + sbar2_next;
    let g2 = g * g;

    let mut radicand = sig2 * sbar2 - g2 * tot;
    if radicand < 0.0 {
        if radicand >= -RADICAND_TOL * sig2 * sbar2 {
            radicand = 0.0;
        } else {
            return Err(Error::GConstraint {
                n,
                g,
                bound: gn_bound(s, n),
                radicand,
            });
        }
    }
    let b = radicand.sqrt() / (sig2_next * sbar2_next).sqrt();
    let a = sbar2 / tot - sbar2_next / tot_next * b;
    let c = sig2 / tot - sig2_next / tot_next * b;
    Ok(PosteriorCoeffs {
        a: a * (1.0 + rel[0]),
        b: b * (1.0 + rel[1]),
        c: c * (1.0 + rel[2]),
        g2,
        step_index: n,
    })
}

pub fn pg_posterior(
    coeffs: &PosteriorCoeffs,
    x0_hat: &Field,
    x_next: &Field,
    xn: &Field,
) -> Result<GaussianSpec> {
    let mean = Field::combine(&[(coeffs.a, x0_hat), (coeffs.b, x_next), (coeffs.c, xn)])?;
    Ok(GaussianSpec {
        mean,
        variance: coeffs.g2,
    })
}

/// `mean + √variance·z` with z drawn from `rng` in element order.
/// A zero variance returns the mean and consumes nothing from the stream.
pub fn sample_gaussian(spec: &GaussianSpec, rng: &mut Rng) -> Field {
    let mut out = spec.mean.clone();
    if spec.variance > 0.0 {
        let sd = spec.variance.sqrt();
        for v in out.data_mut() {
            *v += sd * rng::normal(rng);
        }
    }
    out
}
