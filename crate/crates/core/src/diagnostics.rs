//! Verification suites: algebraic identities of the posterior coefficients,
//! Monte-Carlo marginal checks of the sampler, an end-to-end Gaussian
//! restoration test with the analytic oracle, and a regression check of the
//! oracle itself.
//!
//! Every suite is a deterministic function of its seed and renders both a
//! text table and CSV.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::posterior::{
    ddpm_weights, gn_bound, gn_markov, gn_value, pg_coeffs_perturbed, q_weights, GnPolicy,
};
use crate::predictor::{gaussian_analytic_oracle, Condition, EpsilonPredictor, GaussianPairModel};
use crate::rng;
use crate::sampler::{
    generate_field, generate_observed, marginal_check, MarginalReport, SamplerConfig,
    SamplerMutation,
};
use crate::schedule::{BetaKind, BetaSchedule, Schedule, Spacing, DEFAULT_T_MIN};

/// Identities must hold to this absolute tolerance.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Relative perturbation applied by [`CoeffMutation`].
pub const MUTATION_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoeffMutation {
    #[default]
    None,
    A,
    B,
    C,
}

impl CoeffMutation {
    fn rel(self) -> [f64; 3] {
        match self {
            CoeffMutation::None => [0.0; 3],
            CoeffMutation::A => [MUTATION_REL, 0.0, 0.0],
            CoeffMutation::B => [0.0, MUTATION_REL, 0.0],
            CoeffMutation::C => [0.0, 0.0, MUTATION_REL],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub trials: usize,
    pub seed: u64,
    pub mean_composition: f64,
    pub variance_composition: f64,
    pub coefficient_sum: f64,
    pub i2sb_reduction: f64,
    pub feasibility: f64,
}

impl IdentityReport {
    fn rows(&self) -> [(&'static str, f64); 5] {
        [
            ("mean_composition", self.mean_composition),
            ("variance_composition", self.variance_composition),
            ("coefficient_sum", self.coefficient_sum),
            ("i2sb_reduction", self.i2sb_reduction),
            ("feasibility", self.feasibility),
        ]
    }

    pub fn max_violation(&self) -> f64 {
        self.rows().iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.rows().iter().all(|r| r.1 < IDENTITY_TOL)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "coefficient identities: {} trials, seed {}, tolerance {IDENTITY_TOL:e}\n",
            self.trials, self.seed
        );
        for (name, v) in self.rows() {
            let _ = writeln!(s, "  {name:<22} {v:>12.3e}  {}", verdict(v < IDENTITY_TOL));
        }
        let _ = writeln!(s, "  => {}", verdict(self.pass()));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("identity,max_violation,pass\n");
        for (name, v) in self.rows() {
            let _ = writeln!(s, "{name},{v:e},{}", v < IDENTITY_TOL);
        }
        s
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn random_schedule(r: &mut rng::Rng, steps: usize) -> Result<Schedule> {
    let beta = if r.random_bool(0.5) {
        BetaSchedule::symmetric_triangular(r.random_range(1e-5..1e-3), r.random_range(0.02..0.5))?
    } else {
        BetaSchedule::constant(r.random_range(0.01..0.5))?
    };
    let spacing = if r.random_bool(0.5) {
        Spacing::Quadratic
    } else {
        Spacing::Uniform
    };
    Schedule::new(beta, steps, spacing, DEFAULT_T_MIN)
}

fn random_policy(r: &mut rng::Rng, steps: usize) -> GnPolicy {
    match r.random_range(0..3) {
        0 => GnPolicy::I2sbEquivalent,
        1 => GnPolicy::StepFunction {
            r: r.random_range(0.0..=1.0),
        },
        _ => GnPolicy::CustomTable {
            table: (1..steps).map(|_| r.random_range(0.0..=1.0)).collect(),
        },
    }
}

/// Draws `trials` random (schedule, N ∈ [2, 64], n, g) configurations and
/// records the largest violation of each identity:
///
/// * composing the step-n posterior with the step-(n+1) bridge marginal
///   reproduces the step-n marginal mean (per weight on x₀ and x_N) and variance;
/// * `A + B + C = 1`;
/// * with the Markovian `g`, the generalized coefficients equal the Markovian
///   ones and `C = 0`;
/// * a random policy's `g_n` stays within the feasibility bound.
///
/// At `n = N − 1` the generalized form is singular and the Markovian
/// posterior is checked against the marginal instead.
pub fn coeff_identity_suite(
    trials: usize,
    seed: u64,
    mutation: CoeffMutation,
) -> Result<IdentityReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "identity suite needs at least one trial".into(),
        ));
    }
    let rel = mutation.rel();
    let mut r = rng::stream(seed, 0);
    let mut rep = IdentityReport {
        trials,
        seed,
        mean_composition: 0.0,
        variance_composition: 0.0,
        coefficient_sum: 0.0,
        i2sb_reduction: 0.0,
        feasibility: 0.0,
    };
    for _ in 0..trials {
        let steps = r.random_range(2..=64usize);
        let s = random_schedule(&mut r, steps)?;
        let n = r.random_range(1..steps);
        let (w0, wn, v) = q_weights(&s, n)?;
        let (w0n, wnn, vn) = q_weights(&s, n + 1)?;

        let (a, b, c, g2) = if n + 1 == steps {
            let (wa, wb, var) = ddpm_weights(&s, n)?;
            (wa * (1.0 + rel[0]), wb * (1.0 + rel[1]), 0.0, var)
        } else {
            let g = r.random_range(0.0..=1.0) * gn_bound(&s, n);
            let k = pg_coeffs_perturbed(&s, n, g, rel)?;

            let gm = gn_markov(&s, n);
            let km = pg_coeffs_perturbed(&s, n, gm, rel)?;
            let (wa, wb, _) = ddpm_weights(&s, n)?;
            let red = (km.a - wa).abs().max((km.b - wb).abs()).max(km.c.abs());
            rep.i2sb_reduction = rep.i2sb_reduction.max(red);
            (k.a, k.b, k.c, k.g2)
        };
        let mean_err = (a + b * w0n - w0).abs().max((c + b * wnn - wn).abs());
        rep.mean_composition = rep.mean_composition.max(mean_err);
        rep.variance_composition = rep.variance_composition.max((b * b * vn + g2 - v).abs());
        rep.coefficient_sum = rep.coefficient_sum.max((a + b + c - 1.0).abs());

        if steps >= 3 {
            let policy = random_policy(&mut r, steps);
            let m = r.random_range(1..steps);
            let g = gn_value(&s, m, &policy)?;
            rep.feasibility = rep.feasibility.max((g - gn_bound(&s, m)).max(0.0));
        }
    }
    Ok(rep)
}

/// One scenario of the marginal suite.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCase {
    pub beta: BetaSchedule,
    pub steps: usize,
    pub spacing: Spacing,
    pub policy: GnPolicy,
    pub x0: f64,
    pub xn: f64,
}

impl MarginalCase {
    pub fn label(&self) -> String {
        let kind = match self.beta.kind {
            BetaKind::SymmetricTriangular => "triangular",
            BetaKind::Constant => "constant",
        };
        format!("{kind}/N{}/{}", self.steps, self.policy.label())
    }
}

/// Both policies, r ∈ {0, 0.2, 0.5, 1}, N ∈ {4, 20}, both β kinds.
pub fn default_marginal_cases() -> Vec<MarginalCase> {
    let betas = [
        BetaSchedule::default(),
        BetaSchedule::constant(BetaSchedule::DEFAULT_BETA_MAX).expect("valid constant schedule"),
    ];
    let mut policies = vec![GnPolicy::I2sbEquivalent];
    policies.extend([0.0, 0.2, 0.5, 1.0].map(|r| GnPolicy::StepFunction { r }));
    let mut out = Vec::new();
    for beta in betas {
        for steps in [4, 20] {
            for policy in &policies {
                out.push(MarginalCase {
                    beta,
                    steps,
                    spacing: Spacing::Quadratic,
                    policy: policy.clone(),
                    x0: 0.3,
                    xn: -0.5,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSuiteReport {
    pub trajectories: usize,
    pub cases: Vec<(MarginalCase, MarginalReport)>,
}

impl MarginalSuiteReport {
    pub fn low_power(&self) -> bool {
        self.cases.iter().any(|(_, r)| r.low_power)
    }

    pub fn pass(&self) -> bool {
        self.cases.iter().all(|(_, r)| r.pass())
    }

    pub fn max_abs_z(&self) -> f64 {
        self.cases
            .iter()
            .map(|(_, r)| r.max_abs_z())
            .fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "marginal preservation: M = {} trajectories per case\n",
            self.trajectories
        );
        if self.low_power() {
            let _ = writeln!(
                s,
                "  WARNING: fewer than {} trajectories, the moment tests are underpowered",
                crate::sampler::MIN_TRAJECTORIES
            );
        }
        for (case, rep) in &self.cases {
            let _ = writeln!(
                s,
                "  {:<28} max|z| {:>7.3}  {}",
                case.label(),
                rep.max_abs_z(),
                verdict(rep.pass())
            );
        }
        let _ = writeln!(s, "  => {}", verdict(self.pass()));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,n,emp_mean,q_mean,z_mean,emp_var,q_var,z_var,pass\n");
        for (case, rep) in &self.cases {
            for st in &rep.steps {
                let _ = writeln!(
                    s,
                    "{},{},{:e},{:e},{:.4},{:e},{:e},{:.4},{}",
                    case.label(),
                    st.n,
                    st.emp_mean,
                    st.q_mean,
                    st.z_mean,
                    st.emp_var,
                    st.q_var,
                    st.z_var,
                    st.pass()
                );
            }
        }
        s
    }
}

/// Runs [`marginal_check`] for every case, case `i` on stream `i` of `seed`.
/// `skip_draw` replaces the first (always stochastic) draw with its mean.
pub fn marginal_suite(
    cases: &[MarginalCase],
    trajectories: usize,
    seed: u64,
    skip_draw: bool,
) -> Result<MarginalSuiteReport> {
    let results: Result<Vec<_>> = cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| {
            let s = Schedule::new(case.beta, case.steps, case.spacing, DEFAULT_T_MIN)?;
            let mut cfg = SamplerConfig::new(case.steps, case.policy.clone(), seed);
            cfg.stream = i as u64;
            if skip_draw {
                cfg.mutation = SamplerMutation::SkipDraw { step: case.steps };
            }
            Ok((
                case.clone(),
                marginal_check(case.x0, case.xn, &s, &cfg, trajectories)?,
            ))
        })
        .collect();
    Ok(MarginalSuiteReport {
        trajectories,
        cases: results?,
    })
}

/// Stream index used for drawing `(x0, x1)` pairs, kept apart from sampler streams.
const PAIR_STREAM: u64 = 1 << 32;

pub const END_TO_END_BINS: usize = 10;
pub const END_TO_END_Z: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub x1_lo: f64,
    pub x1_hi: f64,
    pub count: usize,
    /// Mean of `generated − E[X0 | x1]` over the bin.
    pub mean_residual: f64,
    pub se: f64,
    pub z: f64,
    /// Empirical residual variance and the analytic `Var[X0 | X1]`.
    pub emp_var: f64,
    pub analytic_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndReport {
    pub label: String,
    pub samples: usize,
    pub bins: Vec<BinStat>,
    pub rmse_to_x1: f64,
    /// Per-sample residuals in x1-sorted bin order, kept for cross-policy comparison.
    residual_bins: Vec<Vec<f64>>,
}

impl EndToEndReport {
    pub fn max_abs_z(&self) -> f64 {
        self.bins.iter().map(|b| b.z.abs()).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.max_abs_z() <= END_TO_END_Z
    }

    /// Largest per-bin z-score of the difference between two runs' conditional
    /// means. Both runs must come from the same pair seed and sample count.
    pub fn compare(&self, other: &EndToEndReport) -> Result<f64> {
        if self.samples != other.samples || self.bins.len() != other.bins.len() {
            return Err(Error::InvalidArgument(
                "reports were built from different samples".into(),
            ));
        }
        Ok(self
            .bins
            .iter()
            .zip(&other.bins)
            .map(|(a, b)| {
                ((a.mean_residual - b.mean_residual) / (a.se * a.se + b.se * b.se).sqrt()).abs()
            })
            .fold(0.0, f64::max))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "end-to-end Gaussian restoration [{}]: M = {}, rmse(X0_gen, x1) = {:.4}\n",
            self.label, self.samples, self.rmse_to_x1
        );
        let _ = writeln!(
            s,
            "  {:>9} {:>9} {:>7} {:>11} {:>8} {:>9} {:>9}",
            "x1_lo", "x1_hi", "count", "mean_resid", "z", "emp_var", "an_var"
        );
        for b in &self.bins {
            let _ = writeln!(
                s,
                "  {:>9.4} {:>9.4} {:>7} {:>11.3e} {:>8.3} {:>9.4} {:>9.4}",
                b.x1_lo, b.x1_hi, b.count, b.mean_residual, b.z, b.emp_var, b.analytic_var
            );
        }
        let _ = writeln!(s, "  => {} (|z| <= {END_TO_END_Z})", verdict(self.pass()));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("label,x1_lo,x1_hi,count,mean_residual,se,z,emp_var,analytic_var\n");
        for b in &self.bins {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{},{:e},{:e},{:.4},{:e},{:e}",
                self.label,
                b.x1_lo,
                b.x1_hi,
                b.count,
                b.mean_residual,
                b.se,
                b.z,
                b.emp_var,
                b.analytic_var
            );
        }
        s
    }
}

/// Draws `samples` pairs from `model`, restores every `x1` with the analytic
/// oracle, and compares the generated `X0` with `N(E[X0|x1], Var[X0|x1])`
/// inside quantile bins of `x1`. Pairs depend only on `cfg.seed`, so two
/// policies run with the same seed see the same data.
pub fn end_to_end_gaussian(
    model: GaussianPairModel,
    s: &Schedule,
    cfg: &SamplerConfig,
    samples: usize,
) -> Result<EndToEndReport> {
    if samples < END_TO_END_BINS * 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples",
            END_TO_END_BINS * 2
        )));
    }
    let mut r = rng::stream(cfg.seed, PAIR_STREAM);
    let x1: Vec<f64> = (0..samples)
        .map(|_| {
            let x0 = model.mu0 + model.s0sq.sqrt() * rng::normal(&mut r);
            x0 + model.s1sq.sqrt() * rng::normal(&mut r)
        })
        .collect();
    let oracle = gaussian_analytic_oracle(model);
    let (gen, _) = generate_field(&Field::row(x1.clone()), &oracle, s, cfg)?;
    let gen = gen.data();

    let analytic_var = model.x0_given_x1(0.0).1;
    let mut order: Vec<usize> = (0..samples).collect();
    order.sort_by(|&i, &j| x1[i].total_cmp(&x1[j]));
    let mut bins = Vec::with_capacity(END_TO_END_BINS);
    let mut residual_bins = Vec::with_capacity(END_TO_END_BINS);
    for k in 0..END_TO_END_BINS {
        let idx = &order[k * samples / END_TO_END_BINS..(k + 1) * samples / END_TO_END_BINS];
        let res: Vec<f64> = idx
            .iter()
            .map(|&i| gen[i] - model.x0_given_x1(x1[i]).0)
            .collect();
        let cnt = res.len() as f64;
        let mean = res.iter().sum::<f64>() / cnt;
        let var = res.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (cnt - 1.0);
        let se = (var / cnt).sqrt();
        let z = if se > 0.0 {
            mean / se
        } else if mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        bins.push(BinStat {
            x1_lo: x1[idx[0]],
            x1_hi: x1[*idx.last().expect("non-empty bin")],
            count: res.len(),
            mean_residual: mean,
            se,
            z,
            emp_var: var,
            analytic_var,
        });
        residual_bins.push(res);
    }
    let rmse_to_x1 = (gen
        .iter()
        .zip(&x1)
        .map(|(g, x)| (g - x).powi(2))
        .sum::<f64>()
        / samples as f64)
        .sqrt();
    Ok(EndToEndReport {
        label: format!("N{}/{}", cfg.steps, cfg.policy.label()),
        samples,
        bins,
        rmse_to_x1,
        residual_bins,
    })
}

impl EndToEndReport {
    pub fn residuals(&self) -> &[Vec<f64>] {
        &self.residual_bins
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCase {
    pub model: GaussianPairModel,
    pub sigma2: f64,
    pub sbar2: f64,
    pub query: (f64, f64),
    pub oracle: f64,
    pub regression: f64,
    pub se: f64,
}

impl OracleCase {
    pub fn z(&self) -> f64 {
        (self.oracle - self.regression) / self.se
    }
}

pub const ORACLE_Z: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub samples: usize,
    pub cases: Vec<OracleCase>,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.cases.iter().all(|c| c.z().abs() <= ORACLE_Z)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "analytic oracle vs least-squares regression: M = {}\n",
            self.samples
        );
        for c in &self.cases {
            let _ = writeln!(
                s,
                "  mu0 {:>6.3} s0sq {:>6.3} s1sq {:>6.3} sigma2 {:>7.4} sbar2 {:>7.4}  oracle {:>9.5} regr {:>9.5}  z {:>6.2}",
                c.model.mu0, c.model.s0sq, c.model.s1sq, c.sigma2, c.sbar2, c.oracle, c.regression, c.z()
            );
        }
        let _ = writeln!(s, "  => {} (|z| <= {ORACLE_Z})", verdict(self.pass()));
        s
    }
}

/// For `cases` random models and bridge times, regresses `X0` on
/// `(1, X_t, X_1)` over `samples` simulated triples and compares the fitted
/// value at a query point with the oracle's x̂₀ (recovered from its ε output).
pub fn oracle_regression_suite(cases: usize, samples: usize, seed: u64) -> Result<OracleReport> {
    if samples < 10 {
        return Err(Error::InvalidArgument(
            "regression needs at least 10 samples".into(),
        ));
    }
    let out: Result<Vec<OracleCase>> = (0..cases as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let model = GaussianPairModel::new(
                r.random_range(-0.5..0.5),
                r.random_range(0.1..1.0),
                r.random_range(0.05..0.5),
            )?;
            let s = Schedule::new(
                BetaSchedule::default(),
                20,
                Spacing::Quadratic,
                DEFAULT_T_MIN,
            )?;
            let n = r.random_range(1..20);
            let q = s.query(n);
            let tot = q.sigma2 + q.sbar2;
            let (w0, w1, v) = (q.sbar2 / tot, q.sigma2 / tot, q.sigma2 * q.sbar2 / tot);

            let mut xtx = Matrix3::<f64>::zeros();
            let mut xty = Vector3::<f64>::zeros();
            let mut rows = Vec::with_capacity(samples);
            for _ in 0..samples {
                let x0 = model.mu0 + model.s0sq.sqrt() * rng::normal(&mut r);
                let x1 = x0 + model.s1sq.sqrt() * rng::normal(&mut r);
                let xt = w0 * x0 + w1 * x1 + v.sqrt() * rng::normal(&mut r);
                let row = Vector3::new(1.0, xt, x1);
                xtx += row * row.transpose();
                xty += row * x0;
                rows.push((row, x0));
            }
            let inv = xtx
                .try_inverse()
                .ok_or_else(|| Error::InvalidArgument("singular regression design".into()))?;
            let beta = inv * xty;
            let sse: f64 = rows
                .iter()
                .map(|(row, y)| (y - row.dot(&beta)).powi(2))
                .sum();
            let resid_var = sse / (samples as f64 - 3.0);

            let qx1 = model.mu0 + r.random_range(-1.0..1.0) * model.s0sq.sqrt();
            let qxt = w0 * model.mu0 + w1 * qx1 + r.random_range(-1.0..1.0) * v.sqrt();
            let qrow = Vector3::new(1.0, qxt, qx1);
            let regression = qrow.dot(&beta);
            let se = (resid_var * (qrow.transpose() * inv * qrow)[(0, 0)]).sqrt();

            let eps = gaussian_analytic_oracle(model).predict(
                &Field::scalar(qxt),
                &q,
                &Condition::new(Field::scalar(qx1)),
            )?;
            let oracle = qxt - q.sigma() * eps.data()[0];
            Ok(OracleCase {
                model,
                sigma2: q.sigma2,
                sbar2: q.sbar2,
                query: (qxt, qx1),
                oracle,
                regression,
                se,
            })
        })
        .collect();
    Ok(OracleReport {
        samples,
        cases: out?,
    })
}

/// A direct transcription of Markovian (I²SB) generation: x̂₀ = X_n − σ_n ε,
/// then `X_{n-1} ~ N((α²x̂₀ + σ²X_n)/(α²+σ²), σ²α²/(α²+σ²))` with
/// `σ² = σ²_{n-1}`, `α² = σ²_n − σ²_{n-1}`, returning x̂₀ at n = 1.
/// Returns every visited state, `X_N` first, then the output.
pub fn i2sb_reference(
    xn: &Field,
    eps: &dyn EpsilonPredictor,
    s: &Schedule,
    seed: u64,
    stream: u64,
) -> Result<Vec<Field>> {
    let steps = s.steps();
    let cond = Condition::new(xn.clone());
    let mut r = rng::stream(seed, stream);
    let mut x = xn.clone();
    let mut states = vec![x.clone()];
    for n in (1..=steps).rev() {
        let sig_n = s.sigma2(n).sqrt();
        let e = eps.predict(&x, &s.query(n), &cond)?;
        let x0_hat: Vec<f64> = x
            .data()
            .iter()
            .zip(e.data())
            .map(|(x, e)| x - sig_n * e)
            .collect();
        if n == 1 {
            states.push(Field::new(x.shape(), x0_hat)?);
            return Ok(states);
        }
        let sig2 = s.sigma2(n - 1);
        let alpha2 = s.sigma2(n) - s.sigma2(n - 1);
        let sd = (sig2 * alpha2 / (alpha2 + sig2)).sqrt();
        let next: Vec<f64> = x0_hat
            .iter()
            .zip(x.data())
            .map(|(x0, xc)| (alpha2 * x0 + sig2 * xc) / (alpha2 + sig2) + sd * rng::normal(&mut r))
            .collect();
        x = Field::new(x.shape(), next)?;
        states.push(x.clone());
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub cases: Vec<(usize, f64)>,
}

impl ReductionReport {
    pub fn max_diff(&self) -> f64 {
        self.cases.iter().map(|c| c.1).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.max_diff() < IDENTITY_TOL
    }
}

/// Runs the sampler with the I²SB-equivalent policy and the reference loop
/// from the same seed, reporting the largest elementwise gap between any
/// pair of corresponding states.
pub fn i2sb_reduction_check(
    step_counts: &[usize],
    elements: usize,
    seed: u64,
) -> Result<ReductionReport> {
    let model = GaussianPairModel::new(0.2, 0.6, 0.2)?;
    let oracle = gaussian_analytic_oracle(model);
    let mut r = rng::stream(seed, PAIR_STREAM);
    let xn = Field::row(
        (0..elements)
            .map(|_| 0.2 + 0.9 * rng::normal(&mut r))
            .collect(),
    );
    let mut cases = Vec::new();
    for &steps in step_counts {
        let s = Schedule::new(
            BetaSchedule::default(),
            steps,
            Spacing::Quadratic,
            DEFAULT_T_MIN,
        )?;
        let cfg = SamplerConfig::new(steps, GnPolicy::I2sbEquivalent, seed);
        let reference = i2sb_reference(&xn, &oracle, &s, seed, cfg.stream)?;
        let mut states = vec![xn.clone()];
        let out = generate_observed(&xn, &oracle, &s, &cfg, &mut |st| {
            if st.n < steps {
                states.push(st.state.clone());
            }
        })?;
        states.push(out);
        if states.len() != reference.len() {
            return Err(Error::InvalidArgument("trajectory lengths differ".into()));
        }
        let diff = states
            .iter()
            .zip(&reference)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        cases.push((steps, diff));
    }
    Ok(ReductionReport { cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_hold() {
        let rep = coeff_identity_suite(300, 7, CoeffMutation::None).unwrap();
        assert!(rep.pass(), "{}", rep.to_text());
        assert!(rep.i2sb_reduction >= 0.0);
    }

    #[test]
    fn each_mutation_is_detected() {
        for m in [CoeffMutation::A, CoeffMutation::B, CoeffMutation::C] {
            let rep = coeff_identity_suite(300, 7, m).unwrap();
            assert!(!rep.pass(), "{m:?} undetected");
            assert!(rep.max_violation() < 1e-5);
        }
    }

    #[test]
    fn identity_suite_is_deterministic() {
        assert_eq!(
            coeff_identity_suite(1, 3, CoeffMutation::None).unwrap(),
            coeff_identity_suite(1, 3, CoeffMutation::None).unwrap()
        );
        assert!(coeff_identity_suite(0, 3, CoeffMutation::None).is_err());
    }

    #[test]
    fn default_cases_cover_matrix() {
        let cases = default_marginal_cases();
        assert_eq!(cases.len(), 20);
        for r in [0.0, 0.2, 0.5, 1.0] {
            assert!(cases
                .iter()
                .any(|c| c.policy == GnPolicy::StepFunction { r }));
        }
        assert!(cases.iter().any(|c| c.beta.kind == BetaKind::Constant));
        assert!(cases.iter().any(|c| c.steps == 4) && cases.iter().any(|c| c.steps == 20));
    }

    #[test]
    fn low_power_is_flagged() {
        let rep = marginal_suite(&default_marginal_cases()[..2], 100, 1, false).unwrap();
        assert!(rep.low_power());
        assert!(rep.to_text().contains("WARNING"));
    }

    #[test]
    fn skip_draw_fails() {
        let cases = default_marginal_cases();
        let rep = marginal_suite(&cases[..3], 10_000, 1, true).unwrap();
        assert!(!rep.pass());
        let ok = marginal_suite(&cases[..3], 10_000, 1, false).unwrap();
        assert!(ok.pass(), "{}", ok.to_text());
        assert!(ok.to_csv().lines().count() > 3);
    }

    #[test]
    fn end_to_end_noiseless_limit() {
        let model = GaussianPairModel::new(0.1, 0.5, 1e-10).unwrap();
        let s = Schedule::new(
            BetaSchedule::default(),
            20,
            Spacing::Quadratic,
            DEFAULT_T_MIN,
        )
        .unwrap();
        let cfg = SamplerConfig::new(20, GnPolicy::I2sbEquivalent, 4);
        let rep = end_to_end_gaussian(model, &s, &cfg, 20_000).unwrap();
        assert!(
            rep.rmse_to_x1 < 3.0 / (20_000f64).sqrt(),
            "{}",
            rep.rmse_to_x1
        );
    }

    #[test]
    fn end_to_end_small() {
        let model = GaussianPairModel::new(0.2, 0.6, 0.2).unwrap();
        let s = Schedule::new(
            BetaSchedule::default(),
            20,
            Spacing::Quadratic,
            DEFAULT_T_MIN,
        )
        .unwrap();
        let a = end_to_end_gaussian(
            model,
            &s,
            &SamplerConfig::new(20, GnPolicy::I2sbEquivalent, 9),
            20_000,
        )
        .unwrap();
        let b = end_to_end_gaussian(
            model,
            &s,
            &SamplerConfig::new(20, GnPolicy::StepFunction { r: 0.2 }, 9),
            20_000,
        )
        .unwrap();
        assert!(a.pass(), "{}", a.to_text());
        assert!(b.pass(), "{}", b.to_text());
        assert!(a.compare(&b).unwrap() <= END_TO_END_Z);
        assert_eq!(a.residuals().len(), END_TO_END_BINS);
    }

    #[test]
    fn oracle_regression_small() {
        let rep = oracle_regression_suite(3, 100_000, 2).unwrap();
        assert!(rep.pass(), "{}", rep.to_text());
    }

    #[test]
    fn reduction_matches_reference() {
        let rep = i2sb_reduction_check(&[4, 20], 16, 3).unwrap();
        assert!(rep.pass(), "{:?}", rep);
    }
}
