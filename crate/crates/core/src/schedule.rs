//! Diffusion rate β(t), the generative time grid, and the accumulated
//! variances σ²(t) = ∫₀ᵗ β and σ̄²(t) = ∫ₜ¹ β derived from it.
//!
//! All integrals use closed-form antiderivatives, so values at a shared time
//! point are bit-identical across grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    /// Linear ramp from `beta_min` at t=0 to `beta_max` at t=½, mirrored on [½, 1].
    SymmetricTriangular,
    /// β(t) = `beta_max` everywhere.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub kind: BetaKind,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl BetaSchedule {
    pub const DEFAULT_BETA_MIN: f64 = 1e-4;
    pub const DEFAULT_BETA_MAX: f64 = 0.15;

    pub fn symmetric_triangular(beta_min: f64, beta_max: f64) -> Result<Self> {
        Self::new(BetaKind::SymmetricTriangular, beta_min, beta_max)
    }

    pub fn constant(beta: f64) -> Result<Self> {
        Self::new(BetaKind::Constant, 0.0, beta)
    }

    pub fn new(kind: BetaKind, beta_min: f64, beta_max: f64) -> Result<Self> {
        let s = Self {
            kind,
            beta_min,
            beta_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min.is_finite() && self.beta_max.is_finite()) {
            return Err(Error::InvalidArgument("beta bounds must be finite".into()));
        }
        match self.kind {
            BetaKind::SymmetricTriangular
                if !(self.beta_min >= 0.0 && self.beta_max > self.beta_min) =>
            {
                Err(Error::InvalidArgument(format!(
                    "triangular schedule needs 0 <= beta_min < beta_max, got {} / {}",
                    self.beta_min, self.beta_max
                )))
            }
            BetaKind::Constant if !(self.beta_max > 0.0) => Err(Error::InvalidArgument(format!(
                "constant schedule needs beta > 0, got {}",
                self.beta_max
            ))),
            _ => Ok(()),
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        match self.kind {
            BetaKind::Constant => self.beta_max,
            BetaKind::SymmetricTriangular => {
                let d = self.beta_max - self.beta_min;
                let u = if t <= 0.5 { t } else { 1.0 - t };
                self.beta_min + 2.0 * d * u
            }
        }
    }

    /// ∫₀ᵗ β(τ) dτ.
    pub fn sigma2_at(&self, t: f64) -> f64 {
        match self.kind {
            BetaKind::Constant => self.beta_max * t,
            BetaKind::SymmetricTriangular => {
                if t <= 0.5 {
                    self.ramp_integral(t)
                } else {
                    self.total() - self.ramp_integral(1.0 - t)
                }
            }
        }
    }

    /// ∫ₜ¹ β(τ) dτ, evaluated directly rather than as `total − σ²(t)`.
    pub fn sbar2_at(&self, t: f64) -> f64 {
        match self.kind {
            BetaKind::Constant => self.beta_max * (1.0 - t),
            // The profile is symmetric, so ∫ₜ¹ β = ∫₀^{1−t} β.
            BetaKind::SymmetricTriangular => self.sigma2_at(1.0 - t),
        }
    }

    pub fn total(&self) -> f64 {
        match self.kind {
            BetaKind::Constant => self.beta_max,
            BetaKind::SymmetricTriangular => 0.5 * (self.beta_min + self.beta_max),
        }
    }

    // ∫₀ᵘ β for u ≤ ½ on the rising half.
    fn ramp_integral(&self, u: f64) -> f64 {
        self.beta_min * u + (self.beta_max - self.beta_min) * u * u
    }
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            kind: BetaKind::SymmetricTriangular,
            beta_min: Self::DEFAULT_BETA_MIN,
            beta_max: Self::DEFAULT_BETA_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// t_n = (n/N)², dense near the clean end.
    Quadratic,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    t: Vec<f64>,
    spacing: Spacing,
    t_min: f64,
}

pub const DEFAULT_T_MIN: f64 = 1e-4;

/// Step count of the grid that training draws its time steps from.
pub const TRAIN_STEPS: usize = 1000;
/// Floor for the training grid. The generation default (1e-4) would land
/// above t₂ = 4e-6 on a 1000-step quadratic grid.
pub const TRAIN_T_MIN: f64 = 1e-6;

pub fn build_grid(steps: usize, spacing: Spacing, t_min: f64) -> Result<TimeGrid> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "grid needs at least one step".into(),
        ));
    }
    if !(t_min > 0.0 && t_min < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "t_min must lie in (0, 1), got {t_min}"
        )));
    }
    let nf = steps as f64;
    let mut t: Vec<f64> = (0..=steps)
        .map(|n| {
            let u = n as f64 / nf;
            match spacing {
                Spacing::Quadratic => u * u,
                Spacing::Uniform => u,
            }
        })
        .collect();
    t[0] = 0.0;
    t[steps] = 1.0;
    if steps >= 2 {
        if t_min >= t[2] {
            return Err(Error::InvalidArgument(format!(
                "t_min {t_min} must be below t_2 = {}",
                t[2]
            )));
        }
        t[1] = t[1].max(t_min);
    }
    Ok(TimeGrid {
        steps,
        t,
        spacing,
        t_min,
    })
}

impl TimeGrid {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn t(&self, n: usize) -> f64 {
        self.t[n]
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }
}

/// Schedule quantities the predictor needs at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepQuery {
    pub n: usize,
    pub t: f64,
    pub sigma2: f64,
    pub sbar2: f64,
}

impl StepQuery {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    beta: BetaSchedule,
    grid: TimeGrid,
    sigma2: Vec<f64>,
    sbar2: Vec<f64>,
    alpha2: Vec<f64>,
}

pub fn build_schedule(beta: BetaSchedule, grid: TimeGrid) -> Result<Schedule> {
    beta.validate()?;
    let sigma2: Vec<f64> = grid.t.iter().map(|&t| beta.sigma2_at(t)).collect();
    let mut sbar2: Vec<f64> = grid.t.iter().map(|&t| beta.sbar2_at(t)).collect();
    sbar2[grid.steps] = 0.0;
    let alpha2 = sigma2.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(Schedule {
        beta,
        grid,
        sigma2,
        sbar2,
        alpha2,
    })
}

pub fn total_variance(s: &Schedule) -> f64 {
    s.sigma2[s.grid.steps]
}

impl Schedule {
    /// Convenience constructor: grid and schedule in one call.
    pub fn new(beta: BetaSchedule, steps: usize, spacing: Spacing, t_min: f64) -> Result<Self> {
        build_schedule(beta, build_grid(steps, spacing, t_min)?)
    }

    /// The 1000-step quadratic grid used to sample training time steps.
    pub fn training(beta: BetaSchedule) -> Result<Self> {
        Self::new(beta, TRAIN_STEPS, Spacing::Quadratic, TRAIN_T_MIN)
    }

    pub fn beta(&self) -> &BetaSchedule {
        &self.beta
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn sigma2(&self, n: usize) -> f64 {
        self.sigma2[n]
    }

    pub fn sbar2(&self, n: usize) -> f64 {
        self.sbar2[n]
    }

    /// ∫ β over [t_n, t_{n+1}], for n < N.
    pub fn alpha2(&self, n: usize) -> f64 {
        self.alpha2[n]
    }

    pub fn sigma2_all(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn sbar2_all(&self) -> &[f64] {
        &self.sbar2
    }

    pub fn alpha2_all(&self) -> &[f64] {
        &self.alpha2
    }

    pub fn total_variance(&self) -> f64 {
        total_variance(self)
    }

    /// Variance of the bridge marginal at grid point n.
    pub fn q_variance(&self, n: usize) -> f64 {
        let (s, sb) = (self.sigma2[n], self.sbar2[n]);
        if s == 0.0 || sb == 0.0 {
            0.0
        } else {
            s * sb / (s + sb)
        }
    }

    pub fn query(&self, n: usize) -> StepQuery {
        StepQuery {
            n,
            t: self.grid.t[n],
            sigma2: self.sigma2[n],
            sbar2: self.sbar2[n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    // Composite Simpson on each linear piece; exact for piecewise-linear β
    // when the kink at ½ is a node, so it independently checks the antiderivative.
    fn quad(beta: &BetaSchedule, a: f64, b: f64) -> f64 {
        let simpson = |lo: f64, hi: f64| {
            let m = 2000;
            let h = (hi - lo) / m as f64;
            let mut s = beta.beta(lo) + beta.beta(hi);
            for k in 1..m {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * beta.beta(lo + k as f64 * h);
            }
            s * h / 3.0
        };
        if a < 0.5 && b > 0.5 {
            simpson(a, 0.5) + simpson(0.5, b)
        } else {
            simpson(a, b)
        }
    }

    #[test]
    fn quadratic_grid_n2() {
        let g = build_grid(2, Spacing::Quadratic, 1e-4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn uniform_grid_n4() {
        let g = build_grid(4, Spacing::Uniform, 1e-4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn t_min_floor_on_fine_grid() {
        assert!(build_grid(1000, Spacing::Quadratic, 1e-4).is_err());
        let g = build_grid(1000, Spacing::Quadratic, 3e-6).unwrap();
        assert_eq!(g.t(1), 3e-6);
        let g = build_grid(1000, Spacing::Quadratic, 1e-7).unwrap();
        assert!(close(g.t(1), 1e-6, 1e-20));
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(1000), 1.0);
        assert!(g.times().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_errors() {
        assert!(build_grid(0, Spacing::Uniform, 1e-4).is_err());
        assert!(build_grid(4, Spacing::Quadratic, 0.0).is_err());
        assert!(build_grid(4, Spacing::Quadratic, 0.3).is_err());
    }

    #[test]
    fn constant_schedule_values() {
        let s = Schedule::new(
            BetaSchedule::constant(0.15).unwrap(),
            4,
            Spacing::Uniform,
            1e-4,
        )
        .unwrap();
        let want = [0.0, 0.0375, 0.075, 0.1125, 0.15];
        for (a, b) in s.sigma2_all().iter().zip(want) {
            assert!(close(*a, b, 1e-15), "{a} vs {b}");
        }
        assert!(close(total_variance(&s), 0.15, 1e-15));
    }

    #[test]
    fn triangular_total() {
        let b = BetaSchedule::symmetric_triangular(1e-4, 0.15).unwrap();
        let s = Schedule::new(b, 20, Spacing::Quadratic, 1e-4).unwrap();
        assert!(close(total_variance(&s), 0.07505, 1e-15));
        let flat = BetaSchedule {
            kind: BetaKind::Constant,
            beta_min: 0.3,
            beta_max: 0.3,
        };
        assert!(close(flat.total(), 0.3, 0.0));
        assert_eq!(b.beta(0.0), 1e-4);
        assert_eq!(b.beta(1.0), 1e-4);
        assert!(close(b.beta(0.5), 0.15, 1e-15));
    }

    #[test]
    fn schedule_invariants() {
        for beta in [
            BetaSchedule::default(),
            BetaSchedule::constant(0.15).unwrap(),
            BetaSchedule::symmetric_triangular(0.02, 0.9).unwrap(),
        ] {
            for spacing in [Spacing::Quadratic, Spacing::Uniform] {
                let s = Schedule::new(beta, 37, spacing, 1e-4).unwrap();
                let total = s.total_variance();
                assert_eq!(s.sigma2(0), 0.0);
                assert_eq!(s.sbar2(37), 0.0);
                for n in 0..=37 {
                    assert!(((s.sigma2(n) + s.sbar2(n)) - total).abs() <= 1e-12 * total);
                    let v = s.q_variance(n);
                    if n == 0 || n == 37 {
                        assert_eq!(v, 0.0);
                    } else {
                        assert!(v > 0.0);
                    }
                }
                for n in 0..37 {
                    assert!(s.alpha2(n) > 0.0);
                    assert!(((s.sigma2(n) + s.alpha2(n)) - s.sigma2(n + 1)).abs() <= 1e-15 * total);
                    assert!(s.sigma2(n + 1) >= s.sigma2(n));
                    assert!(s.sbar2(n + 1) <= s.sbar2(n));
                }
            }
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for beta in [
            BetaSchedule::default(),
            BetaSchedule::constant(0.15).unwrap(),
            BetaSchedule::symmetric_triangular(0.05, 0.4).unwrap(),
        ] {
            for t in [0.0, 1e-4, 0.013, 0.25, 0.5, 0.61, 0.9, 1.0] {
                assert!(close(beta.sigma2_at(t), quad(&beta, 0.0, t), 1e-10));
                assert!(close(beta.sbar2_at(t), quad(&beta, t, 1.0), 1e-10));
            }
        }
    }

    #[test]
    fn refinement_keeps_shared_points() {
        let beta = BetaSchedule::default();
        let coarse = Schedule::new(beta, 10, Spacing::Quadratic, 1e-4).unwrap();
        let fine = Schedule::new(beta, 20, Spacing::Quadratic, 1e-4).unwrap();
        for n in 1..=10 {
            assert_eq!(coarse.sigma2(n), fine.sigma2(2 * n));
            assert_eq!(coarse.sbar2(n), fine.sbar2(2 * n));
        }
    }
}
