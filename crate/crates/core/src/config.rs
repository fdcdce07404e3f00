//! Experiment configuration: a sectioned TOML file.
//!
//! Every section has defaults, so an empty file describes the default toy
//! denoising experiment. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::degrade::{DegradeKind, DegradeSpec, ToyKind};
use crate::error::{Error, Result};
use crate::metrics::GlcmConfig;
use crate::posterior::GnPolicy;
use crate::predictor::{GaussianPairModel, MlpShape, TrainHyper};
use crate::schedule::{BetaKind, BetaSchedule, Spacing, DEFAULT_T_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Denoise,
    SuperResolve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: ToyKind,
    pub train_count: usize,
    pub test_count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: ToyKind::TextureField,
            train_count: 64,
            test_count: 8,
            size: 32,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeSection {
    /// Only used by the denoising task.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradeSection {
    fn default() -> Self {
        Self {
            noise_sigma: 0.5,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub beta_kind: BetaKind,
    pub beta_min: f64,
    pub beta_max: f64,
    pub spacing: Spacing,
    pub t_min: f64,
    /// Pins the generation grid; every sampler step count must then equal it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            beta_kind: BetaKind::SymmetricTriangular,
            beta_min: BetaSchedule::DEFAULT_BETA_MIN,
            beta_max: BetaSchedule::DEFAULT_BETA_MAX,
            spacing: Spacing::Quadratic,
            t_min: DEFAULT_T_MIN,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Cheat,
    Analytic,
    #[default]
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub kind: PredictorKind,
    pub patch: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    pub log_every: usize,
    pub resume: bool,
    /// Per-pixel Gaussian model used by the analytic predictor.
    pub mu0: f64,
    pub s0sq: f64,
    pub s1sq: f64,
}

impl Default for PredictorSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self {
            kind: PredictorKind::Mlp,
            patch: h.shape.patch,
            hidden: h.shape.hidden,
            learning_rate: h.learning_rate,
            batch: h.batch,
            iters: h.iters,
            seed: 3,
            log_every: h.log_every,
            resume: false,
            mu0: 0.0,
            s0sq: 0.25,
            s1sq: 0.25,
        }
    }
}

impl PredictorSection {
    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            shape: MlpShape {
                patch: self.patch,
                hidden: self.hidden,
            },
            learning_rate: self.learning_rate,
            batch: self.batch,
            iters: self.iters,
            seed: self.seed,
            log_every: self.log_every,
            fixed_step: None,
        }
    }

    pub fn pair_model(&self) -> Result<GaussianPairModel> {
        GaussianPairModel::new(self.mu0, self.s0sq, self.s1sq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub steps: Vec<usize>,
    pub policies: Vec<GnPolicy>,
    pub seed: u64,
    pub record_trajectory: bool,
    pub clamp_x0_hat: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            steps: vec![20, 50, 100],
            policies: vec![GnPolicy::I2sbEquivalent, GnPolicy::StepFunction { r: 0.2 }],
            seed: 4,
            record_trajectory: false,
            clamp_x0_hat: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub data_range: f64,
    pub glcm: GlcmConfig,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            data_range: 2.0,
            glcm: GlcmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "results".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub seed: u64,
    pub identity_trials: usize,
    pub marginal_trajectories: usize,
    pub end_to_end_samples: usize,
    pub end_to_end_steps: Vec<usize>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            seed: 7,
            identity_trials: 1000,
            marginal_trajectories: 100_000,
            end_to_end_samples: 100_000,
            end_to_end_steps: vec![20, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetSection,
    pub degrade: DegradeSection,
    pub schedule: ScheduleSection,
    pub predictor: PredictorSection,
    pub sampler: SamplerSection,
    pub metrics: MetricsSection,
    pub output: OutputSection,
    pub verify: VerifySection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn beta(&self) -> Result<BetaSchedule> {
        BetaSchedule::new(
            self.schedule.beta_kind,
            self.schedule.beta_min,
            self.schedule.beta_max,
        )
        .map_err(|e| Error::config("schedule", e.to_string()))
    }

    pub fn degrade_spec(&self) -> DegradeSpec {
        match self.task {
            Task::Denoise => DegradeSpec {
                kind: DegradeKind::GaussianNoise,
                noise_sigma: self.degrade.noise_sigma,
                seed: self.degrade.seed,
            },
            Task::SuperResolve => DegradeSpec {
                kind: DegradeKind::Downsample4x,
                noise_sigma: 0.0,
                seed: self.degrade.seed,
            },
        }
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.size == 0 || !d.size.is_multiple_of(4) {
            return Err(Error::config(
                "dataset.size",
                format!("must be a positive multiple of 4, got {}", d.size),
            ));
        }
        if d.train_count == 0 {
            return Err(Error::config("dataset.train_count", "must be at least 1"));
        }
        if d.test_count == 0 {
            return Err(Error::config("dataset.test_count", "must be at least 1"));
        }
        if !(self.degrade.noise_sigma >= 0.0 && self.degrade.noise_sigma.is_finite()) {
            return Err(Error::config(
                "degrade.noise_sigma",
                "must be finite and >= 0",
            ));
        }
        self.beta()?;
        let sc = &self.schedule;
        if !(sc.t_min > 0.0 && sc.t_min < 1.0) {
            return Err(Error::config("schedule.t_min", "must lie in (0, 1)"));
        }
        let p = &self.predictor;
        MlpShape {
            patch: p.patch,
            hidden: p.hidden,
        }
        .validate()
        .map_err(|e| Error::config("predictor.patch", e.to_string()))?;
        if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
            return Err(Error::config(
                "predictor.learning_rate",
                "must be finite and > 0",
            ));
        }
        if p.batch == 0 || p.iters == 0 || p.log_every == 0 {
            return Err(Error::config(
                "predictor",
                "batch, iters and log_every must be positive",
            ));
        }
        if p.kind == PredictorKind::Analytic {
            p.pair_model()
                .map_err(|e| Error::config("predictor.s0sq", e.to_string()))?;
        }
        let s = &self.sampler;
        if s.steps.is_empty() || s.steps.contains(&0) {
            return Err(Error::config(
                "sampler.steps",
                "needs at least one positive step count",
            ));
        }
        if s.policies.is_empty() {
            return Err(Error::config(
                "sampler.policies",
                "needs at least one policy",
            ));
        }
        for policy in &s.policies {
            for &n in &s.steps {
                policy
                    .validate(n)
                    .map_err(|e| Error::config("sampler.policies", e.to_string()))?;
            }
        }
        if let Some(pinned) = sc.steps {
            if let Some(&n) = s.steps.iter().find(|&&n| n != pinned) {
                return Err(Error::config(
                    "sampler.steps",
                    format!("N = {n} does not match schedule.steps = {pinned}"),
                ));
            }
        }
        if !(self.metrics.data_range > 0.0) {
            return Err(Error::config("metrics.data_range", "must be > 0"));
        }
        self.metrics
            .glcm
            .validate()
            .map_err(|e| Error::config("metrics.glcm", e.to_string()))?;
        let v = &self.verify;
        if v.identity_trials == 0 || v.end_to_end_steps.is_empty() {
            return Err(Error::config(
                "verify",
                "identity_trials and end_to_end_steps must be non-empty",
            ));
        }
        Ok(())
    }
}
