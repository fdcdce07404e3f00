//! The generation loop. Starting from the corrupted image `X_N`, each step
//! predicts x̂₀ from the current state and moves one grid point towards the
//! clean end:
//!
//! * `n == N`: draw `X_{N-1}` from the Markovian posterior (the generalized
//!   one is singular there because σ̄_N = 0);
//! * `1 < n < N`: draw `X_{n-1}` from the generalized posterior, conditioned
//!   on x̂₀, `X_n` and `X_N`, with `g` from the configured policy;
//! * `n == 1`: return x̂₀.
//!
//! Exactly one Gaussian tensor is drawn per stochastic step and none on
//! deterministic ones, so runs that share a seed also share noise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::posterior::{
    ddpm_posterior, gn_value, pg_coeffs_perturbed, pg_posterior, q_weights, sample_gaussian,
    GaussianSpec, GnPolicy,
};
use crate::predictor::{cheat_oracle, Condition, EpsilonPredictor};
use crate::rng;
use crate::schedule::Schedule;
use crate::tensor_io::{write_tensor, ImageTensor};

/// Fault injection for verifying that the statistical checks catch errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SamplerMutation {
    #[default]
    None,
    /// Multiply the weight on `X_n` by this factor at every stochastic step.
    ScaleB(f64),
    /// Use the posterior mean instead of drawing at generative step `step`.
    SkipDraw { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub policy: GnPolicy,
    pub seed: u64,
    /// Stream index under `seed`; distinct images use distinct streams.
    pub stream: u64,
    pub record_trajectory: bool,
    pub clamp_x0_hat: Option<(f64, f64)>,
    pub mutation: SamplerMutation,
}

impl SamplerConfig {
    pub fn new(steps: usize, policy: GnPolicy, seed: u64) -> Self {
        Self {
            steps,
            policy,
            seed,
            stream: 0,
            record_trajectory: false,
            clamp_x0_hat: None,
            mutation: SamplerMutation::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Ddpm,
    Pg,
    DeterministicFinal,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Ddpm => "ddpm",
            Branch::Pg => "pg",
            Branch::DeterministicFinal => "deterministic-final",
        }
    }
}

/// Everything known about one generative step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub n: usize,
    pub branch: Branch,
    /// State `X_n` the step started from.
    pub state: Field,
    pub x0_hat: Field,
    /// Weights on (x̂₀, `X_n`, `X_N`) and the variance of the draw.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub g2: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    /// Ordered from `n = N` down to `n = 1`.
    pub steps: Vec<TrajectoryStep>,
}

impl TrajectoryRecord {
    pub fn manifest(&self) -> String {
        let mut out = String::from("step,branch,a,b,c,g2\n");
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
                s.n,
                s.branch.as_str(),
                s.a,
                s.b,
                s.c,
                s.g2
            )
            .unwrap();
        }
        out
    }

    /// Writes `trajectory.csv` and one x̂₀ tensor per step.
    pub fn write_to(&self, dir: impl AsRef<Path>, range: (f32, f32)) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in &self.steps {
            write_tensor(
                &s.x0_hat.to_tensor(range)?,
                dir.join(format!("x0hat_{:04}.bstn", s.n)),
            )?;
        }
        let path = dir.join("trajectory.csv");
        fs::write(&path, self.manifest()).map_err(|e| Error::io(&path, e))
    }
}

/// Runs generation on f64 fields, calling `observe` after every step.
pub fn generate_observed(
    xn: &Field,
    eps: &dyn EpsilonPredictor,
    s: &Schedule,
    cfg: &SamplerConfig,
    observe: &mut dyn FnMut(&TrajectoryStep),
) -> Result<Field> {
    let steps = s.steps();
    if cfg.steps == 0 {
        return Err(Error::config("sampler.steps", "must be at least 1"));
    }
    if steps != cfg.steps {
        return Err(Error::config(
            "sampler.steps",
            format!(
                "sampler uses N = {} but the schedule grid has N = {steps}",
                cfg.steps
            ),
        ));
    }
    cfg.policy.validate(steps)?;
    if !xn.is_finite() {
        return Err(Error::NonFiniteStep { n: steps });
    }
    let cond = Condition::new(xn.clone());
    let mut rng = rng::stream(cfg.seed, cfg.stream);
    let mut x = xn.clone();
    for n in (1..=steps).rev() {
        let q = s.query(n);
        let e = eps.predict(&x, &q, &cond)?;
        x.ensure_same_shape(&e)?;
        let sigma = q.sigma();
        let mut x0_hat: Vec<f64> = x
            .data()
            .iter()
            .zip(e.data())
            .map(|(x, e)| x - sigma * e)
            .collect();
        if let Some((lo, hi)) = cfg.clamp_x0_hat {
            for v in &mut x0_hat {
                *v = v.clamp(lo, hi);
            }
        }
        let x0_hat = Field::new(x.shape(), x0_hat)?;
        if !x0_hat.is_finite() {
            return Err(Error::NonFiniteStep { n });
        }

        if n == 1 {
            observe(&TrajectoryStep {
                n,
                branch: Branch::DeterministicFinal,
                state: x,
                x0_hat: x0_hat.clone(),
                a: 1.0,
                b: 0.0,
                c: 0.0,
                g2: 0.0,
            });
            return Ok(x0_hat);
        }

        let m = n - 1;
        let b_scale = match cfg.mutation {
            SamplerMutation::ScaleB(f) => f,
            _ => 1.0,
        };
        let (branch, spec, a, b, c): (Branch, GaussianSpec, f64, f64, f64) = if n == steps {
            let mut spec = ddpm_posterior(s, m, &x0_hat, &x)?;
            let (wa, wb, _) = crate::posterior::ddpm_weights(s, m)?;
            if b_scale != 1.0 {
                spec.mean = Field::combine(&[(wa, &x0_hat), (wb * b_scale, &x)])?;
            }
            (Branch::Ddpm, spec, wa, wb * b_scale, 0.0)
        } else {
            let g = gn_value(s, m, &cfg.policy)?;
            let mut coeffs = pg_coeffs_perturbed(s, m, g, [0.0; 3])?;
            coeffs.b *= b_scale;
            let spec = pg_posterior(&coeffs, &x0_hat, &x, xn)?;
            (Branch::Pg, spec, coeffs.a, coeffs.b, coeffs.c)
        };
        let next = if cfg.mutation == (SamplerMutation::SkipDraw { step: n }) {
            spec.mean.clone()
        } else {
            sample_gaussian(&spec, &mut rng)
        };
        if !next.is_finite() {
            return Err(Error::NonFiniteStep { n });
        }
        observe(&TrajectoryStep {
            n,
            branch,
            state: x,
            x0_hat,
            a,
            b,
            c,
            g2: spec.variance,
        });
        x = next;
    }
    unreachable!("loop returns at n = 1")
}

pub fn generate_field(
    xn: &Field,
    eps: &dyn EpsilonPredictor,
    s: &Schedule,
    cfg: &SamplerConfig,
) -> Result<(Field, Option<TrajectoryRecord>)> {
    let mut record = TrajectoryRecord::default();
    let out = generate_observed(xn, eps, s, cfg, &mut |step| {
        if cfg.record_trajectory {
            record.steps.push(step.clone());
        }
    })?;
    Ok((out, cfg.record_trajectory.then_some(record)))
}

/// Image-level entry point; the returned tensor keeps `xn`'s range metadata.
pub fn generate(
    xn: &ImageTensor,
    eps: &dyn EpsilonPredictor,
    s: &Schedule,
    cfg: &SamplerConfig,
) -> Result<(ImageTensor, Option<TrajectoryRecord>)> {
    let (out, rec) = generate_field(&Field::from_tensor(xn), eps, s, cfg)?;
    Ok((out.to_tensor(xn.range())?, rec))
}

/// Below this many trajectories the moment tests are flagged as underpowered.
pub const MIN_TRAJECTORIES: usize = 10_000;
pub const Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalStepStat {
    pub n: usize,
    pub emp_mean: f64,
    pub emp_var: f64,
    pub q_mean: f64,
    pub q_var: f64,
    pub z_mean: f64,
    pub z_var: f64,
}

impl MarginalStepStat {
    pub fn pass(&self) -> bool {
        self.z_mean.abs() <= Z_THRESHOLD && self.z_var.abs() <= Z_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalReport {
    pub trajectories: usize,
    pub low_power: bool,
    pub steps: Vec<MarginalStepStat>,
}

impl MarginalReport {
    pub fn pass(&self) -> bool {
        self.steps.iter().all(MarginalStepStat::pass)
    }

    pub fn max_abs_z(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.z_mean.abs().max(s.z_var.abs()))
            .fold(0.0, f64::max)
    }
}

/// Runs `trajectories` independent scalar chains from `xn` with a predictor
/// that knows `x0`, and compares the empirical moments of each interior
/// state `X_n` with the bridge marginal. Chains are packed into one row
/// field; each element has its own noise so they are independent.
pub fn marginal_check(
    x0: f64,
    xn: f64,
    s: &Schedule,
    cfg: &SamplerConfig,
    trajectories: usize,
) -> Result<MarginalReport> {
    if trajectories < 2 {
        return Err(Error::InvalidArgument(
            "need at least two trajectories".into(),
        ));
    }
    let oracle = cheat_oracle(Field::row(vec![x0; trajectories]));
    let start = Field::row(vec![xn; trajectories]);
    let steps = s.steps();
    let mut stats = Vec::new();
    let m = trajectories as f64;
    generate_observed(&start, &oracle, s, cfg, &mut |step| {
        if step.n == steps {
            return;
        }
        let d = step.state.data();
        let mean = d.iter().sum::<f64>() / m;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let (w0, wn, q_var) = q_weights(s, step.n).expect("interior step");
        let q_mean = w0 * x0 + wn * xn;
        stats.push(MarginalStepStat {
            n: step.n,
            emp_mean: mean,
            emp_var: var,
            q_mean,
            q_var,
            z_mean: (mean - q_mean) / (q_var / m).sqrt(),
            z_var: (var / q_var - 1.0) / (2.0 / (m - 1.0)).sqrt(),
        });
    })?;
    stats.reverse();
    Ok(MarginalReport {
        trajectories,
        low_power: trajectories < MIN_TRAJECTORIES,
        steps: stats,
    })
}
