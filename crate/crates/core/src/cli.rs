//! Subcommands of the `i3sb` binary as library functions.
//!
//! Results layout under the output root:
//!
//! ```text
//! data/manifest.txt
//! data/{train,test}/{clean,corrupted}/NNNN.bstn
//! model/                      trained network
//! train/loss.csv
//! samples/<method>_N<n>/NNNN.{bstn,pgm}
//! samples/<method>_N<n>/trajectories/NNNN/
//! eval/metrics.csv
//! verify/*.txt, verify/*.csv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, PredictorKind};
use crate::degrade::{make_pairs, make_toy_dataset, WORKING_RANGE};
use crate::diagnostics::{
    coeff_identity_suite, default_marginal_cases, end_to_end_gaussian, i2sb_reduction_check,
    marginal_suite, CoeffMutation, END_TO_END_Z,
};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::metrics::{haralick_distance, rmse, ssim};
use crate::posterior::GnPolicy;
use crate::predictor::{
    cheat_oracle, gaussian_analytic_oracle, train_tiny_mlp_with, EpsilonPredictor, TinyMlp,
};
use crate::sampler::{generate, SamplerConfig, SamplerMutation};
use crate::schedule::Schedule;
use crate::tensor_io::{export_pgm, read_tensor, write_tensor, ImageTensor};

/// Overrides the output root from the config file.
pub const RESULTS_ENV: &str = "BRIDGE_RESULTS_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "i3sb",
    version,
    about = "Image-to-image bridge sampling experiments"
)]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads for image-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0, value_name = "K")]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the toy dataset and its manifest.
    GenData {
        /// Overwrite existing data that does not match the config.
        #[arg(long)]
        force: bool,
    },
    /// Train the tiny MLP ε-predictor.
    Train,
    /// Restore the test split for every configured N and policy.
    Sample,
    /// Compute SSIM, Haralick distance and RMSE against the clean images.
    Eval,
    /// Run the verification suites; exit code 1 if any fails.
    Verify {
        /// Inject coefficient and sampler faults; the suites must fail.
        #[arg(long)]
        mutate: bool,
    },
}

/// A loaded config and the directory its outputs go to.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
    pub jobs: usize,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, root: impl Into<PathBuf>) -> Self {
        Self {
            cfg,
            root: root.into(),
            jobs: 0,
        }
    }

    /// Loads `config` (or defaults) and resolves the output root: the
    /// override if given, else `output.dir` relative to the config's directory.
    pub fn load(
        config: Option<&Path>,
        root_override: Option<PathBuf>,
        jobs: usize,
    ) -> Result<Self> {
        let (cfg, base) = match config {
            Some(p) => (
                ExperimentConfig::load(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (ExperimentConfig::default(), PathBuf::new()),
        };
        let root = root_override.unwrap_or_else(|| base.join(&cfg.output.dir));
        Ok(Self { cfg, root, jobs })
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }
}

/// Reads [`RESULTS_ENV`], ignoring an empty value.
pub fn env_results_root() -> Option<PathBuf> {
    std::env::var_os(RESULTS_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn image_name(i: usize) -> String {
    format!("{i:04}.bstn")
}

fn split_file(split: &str, kind: &str, i: usize) -> PathBuf {
    Path::new("data").join(split).join(kind).join(image_name(i))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenDataOutcome {
    Written { manifest_hash: String },
    Unchanged { manifest_hash: String },
}

impl GenDataOutcome {
    pub fn manifest_hash(&self) -> &str {
        match self {
            GenDataOutcome::Written { manifest_hash }
            | GenDataOutcome::Unchanged { manifest_hash } => manifest_hash,
        }
    }
}

/// Materializes the dataset. Re-running with the same config is a no-op
/// when every file still matches the manifest; differing contents are an
/// error unless `force` is set.
pub fn cmd_gen_data(ctx: &Context, force: bool) -> Result<GenDataOutcome> {
    let cfg = &ctx.cfg;
    let d = &cfg.dataset;
    let clean = make_toy_dataset(d.kind, d.train_count + d.test_count, d.size, d.seed)?;
    let pairs = make_pairs(clean, &cfg.degrade_spec())?;

    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::with_capacity(2 * pairs.len());
    for (i, (x0, x1)) in pairs.iter().enumerate() {
        let (split, idx) = if i < d.train_count {
            ("train", i)
        } else {
            ("test", i - d.train_count)
        };
        files.push((split_file(split, "clean", idx), x0.to_bytes()?));
        files.push((split_file(split, "corrupted", idx), x1.to_bytes()?));
    }
    let mut manifest = String::from("# path sha256\n");
    for (path, bytes) in &files {
        let _ = writeln!(manifest, "{} {}", path.display(), sha256_hex(bytes));
    }
    let manifest_hash = sha256_hex(manifest.as_bytes());
    let manifest_path = ctx.path("data/manifest.txt");

    if let Ok(existing) = fs::read_to_string(&manifest_path) {
        let intact = existing == manifest
            && files
                .iter()
                .all(|(p, bytes)| fs::read(ctx.path(p)).is_ok_and(|b| b == *bytes));
        if intact {
            return Ok(GenDataOutcome::Unchanged { manifest_hash });
        }
        if !force {
            return Err(Error::config(
                "dataset",
                format!(
                    "{} exists and does not match this config; rerun with --force to overwrite",
                    manifest_path.display()
                ),
            ));
        }
        let data_dir = ctx.path("data");
        fs::remove_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    }
    for (path, bytes) in &files {
        write_file(&ctx.path(path), bytes)?;
    }
    write_file(&manifest_path, manifest.as_bytes())?;
    Ok(GenDataOutcome::Written { manifest_hash })
}

fn load_split(ctx: &Context, split: &str, count: usize) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    if !ctx.path("data/manifest.txt").exists() {
        return Err(Error::config(
            "dataset",
            format!(
                "no dataset under {}; run gen-data first",
                ctx.root.display()
            ),
        ));
    }
    (0..count)
        .map(|i| {
            Ok((
                read_tensor(ctx.path(split_file(split, "clean", i)))?,
                read_tensor(ctx.path(split_file(split, "corrupted", i)))?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// `(iteration, windowed mean loss)`; empty when the predictor needs no training.
    pub losses: Vec<(usize, f64)>,
}

pub fn cmd_train(ctx: &Context) -> Result<TrainOutcome> {
    cmd_train_with(ctx, |_, _| {})
}

/// [`cmd_train`] reporting `(iteration, loss)` at each logging point.
pub fn cmd_train_with(ctx: &Context, on_log: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    let p = &ctx.cfg.predictor;
    if p.resume {
        return Err(Error::config(
            "predictor.resume",
            "resuming training is not supported",
        ));
    }
    if p.kind != PredictorKind::Mlp {
        return Ok(TrainOutcome { losses: Vec::new() });
    }
    let train = load_split(ctx, "train", ctx.cfg.dataset.train_count)?;
    let s = Schedule::training(ctx.cfg.beta()?)?;
    let (net, report) = train_tiny_mlp_with(&train, &s, &p.hyper(), on_log)?;
    net.save(ctx.path("model"))?;
    let mut csv = String::from("iter,loss\n");
    for (iter, loss) in &report.losses {
        let _ = writeln!(csv, "{iter},{loss:.9e}");
    }
    write_file(&ctx.path("train/loss.csv"), csv.as_bytes())?;
    Ok(TrainOutcome {
        losses: report.losses,
    })
}

pub fn method_dir(policy: &GnPolicy, steps: usize) -> String {
    format!("{}_N{steps}", policy.label())
}

fn generation_schedule(ctx: &Context, steps: usize) -> Result<Schedule> {
    let sc = &ctx.cfg.schedule;
    let grid_steps = sc.steps.unwrap_or(steps);
    Schedule::new(ctx.cfg.beta()?, grid_steps, sc.spacing, sc.t_min)
}

enum Loaded {
    Cheat,
    Analytic(Box<dyn EpsilonPredictor>),
    Mlp(TinyMlp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub written: Vec<PathBuf>,
}

pub fn cmd_sample(ctx: &Context) -> Result<SampleOutcome> {
    let cfg = &ctx.cfg;
    let test = load_split(ctx, "test", cfg.dataset.test_count)?;
    let loaded = match cfg.predictor.kind {
        PredictorKind::Cheat => Loaded::Cheat,
        PredictorKind::Analytic => Loaded::Analytic(Box::new(gaussian_analytic_oracle(
            cfg.predictor.pair_model()?,
        ))),
        PredictorKind::Mlp => {
            let dir = ctx.path("model");
            if !dir.exists() {
                return Err(Error::config(
                    "predictor",
                    format!("no trained model at {}; run train first", dir.display()),
                ));
            }
            Loaded::Mlp(TinyMlp::load(dir)?)
        }
    };
    let pool = ctx.pool()?;
    let mut written = Vec::new();
    for &steps in &cfg.sampler.steps {
        let s = generation_schedule(ctx, steps)?;
        for policy in &cfg.sampler.policies {
            let dir = PathBuf::from("samples").join(method_dir(policy, steps));
            let results: Result<Vec<_>> = pool.install(|| {
                test.par_iter()
                    .enumerate()
                    .map(|(i, (x0, x1))| {
                        let mut sc = SamplerConfig::new(steps, policy.clone(), cfg.sampler.seed);
                        sc.stream = i as u64;
                        sc.record_trajectory = cfg.sampler.record_trajectory;
                        if cfg.sampler.clamp_x0_hat {
                            sc.clamp_x0_hat =
                                Some((WORKING_RANGE.0 as f64, WORKING_RANGE.1 as f64));
                        }
                        match &loaded {
                            Loaded::Cheat => {
                                generate(x1, &cheat_oracle(Field::from_tensor(x0)), &s, &sc)
                            }
                            Loaded::Analytic(p) => generate(x1, p.as_ref(), &s, &sc),
                            Loaded::Mlp(net) => generate(x1, net, &s, &sc),
                        }
                    })
                    .collect()
            });
            for (i, (out, record)) in results?.into_iter().enumerate() {
                let file = ctx.path(dir.join(image_name(i)));
                if let Some(parent) = file.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                write_tensor(&out, &file)?;
                let pgm = file.with_extension("pgm");
                export_pgm(&out, &pgm, WORKING_RANGE.0, WORKING_RANGE.1)?;
                if let Some(rec) = record {
                    rec.write_to(
                        ctx.path(dir.join("trajectories").join(format!("{i:04}"))),
                        out.range(),
                    )?;
                }
                written.push(file);
            }
        }
    }
    Ok(SampleOutcome { written })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub image_id: String,
    pub method: String,
    pub steps: usize,
    pub ssim: f64,
    pub haralick_distance: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub rows: Vec<MetricRow>,
    pub csv: String,
}

impl EvalOutcome {
    /// The `mean` aggregate row for `(method, steps)`.
    pub fn mean(&self, method: &str, steps: usize) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.image_id == "mean" && r.method == method && r.steps == steps)
    }
}

/// Baseline rows use this method name and `N = 0`.
pub const BASELINE_METHOD: &str = "corrupted";

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn cmd_eval(ctx: &Context) -> Result<EvalOutcome> {
    let cfg = &ctx.cfg;
    let test = load_split(ctx, "test", cfg.dataset.test_count)?;
    let mut methods: Vec<(String, usize, Vec<ImageTensor>)> = vec![(
        BASELINE_METHOD.into(),
        0,
        test.iter().map(|p| p.1.clone()).collect(),
    )];
    let mut missing = Vec::new();
    for &steps in &cfg.sampler.steps {
        for policy in &cfg.sampler.policies {
            let dir = PathBuf::from("samples").join(method_dir(policy, steps));
            let mut imgs = Vec::new();
            for i in 0..test.len() {
                let p = ctx.path(dir.join(image_name(i)));
                if p.exists() {
                    imgs.push(read_tensor(p)?);
                } else {
                    missing.push(format!("{}/{i:04}", dir.display()));
                }
            }
            methods.push((policy.label(), steps, imgs));
        }
    }
    if !missing.is_empty() {
        return Err(Error::config(
            "sampler",
            format!(
                "missing restored images (run sample first): {}",
                missing.join(", ")
            ),
        ));
    }
    let glcm = &cfg.metrics.glcm;
    let range = cfg.metrics.data_range;
    let pool = ctx.pool()?;
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for (method, steps, imgs) in &methods {
        let per_image: Result<Vec<MetricRow>> = pool.install(|| {
            imgs.par_iter()
                .zip(&test)
                .enumerate()
                .map(|(i, (out, (x0, _)))| {
                    Ok(MetricRow {
                        image_id: format!("{i:04}"),
                        method: method.clone(),
                        steps: *steps,
                        ssim: ssim(out, x0, range)?,
                        haralick_distance: haralick_distance(out, x0, glcm)?,
                        rmse: rmse(out, x0)?,
                    })
                })
                .collect()
        });
        let per_image = per_image?;
        let col = |f: fn(&MetricRow) -> f64| mean_std(&per_image.iter().map(f).collect::<Vec<_>>());
        let (s, h, r) = (
            col(|m| m.ssim),
            col(|m| m.haralick_distance),
            col(|m| m.rmse),
        );
        for (id, pick) in [("mean", 0), ("std", 1)] {
            let sel = |p: (f64, f64)| if pick == 0 { p.0 } else { p.1 };
            aggregates.push(MetricRow {
                image_id: id.into(),
                method: method.clone(),
                steps: *steps,
                ssim: sel(s),
                haralick_distance: sel(h),
                rmse: sel(r),
            });
        }
        rows.extend(per_image);
    }
    rows.extend(aggregates);
    let mut csv = String::from("image_id,method,N,ssim,haralick_distance,rmse\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{:.8},{:.8},{:.8}",
            r.image_id, r.method, r.steps, r.ssim, r.haralick_distance, r.rmse
        );
    }
    write_file(&ctx.path("eval/metrics.csv"), csv.as_bytes())?;
    Ok(EvalOutcome { rows, csv })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub pass: bool,
    pub summary: String,
}

/// Runs the identity, marginal and end-to-end suites and writes their
/// reports, whether or not they pass.
pub fn cmd_verify(ctx: &Context, mutate: bool) -> Result<VerifyOutcome> {
    let v = &ctx.cfg.verify;
    let dir = ctx.path("verify");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut summary = String::new();
    let mut pass = true;

    let mutation = if mutate {
        CoeffMutation::B
    } else {
        CoeffMutation::None
    };
    let ids = coeff_identity_suite(v.identity_trials, v.seed, mutation)?;
    let reduction = i2sb_reduction_check(&[4, 20, 100], 64, v.seed)?;
    let mut text = ids.to_text();
    let _ = writeln!(
        text,
        "trajectory reduction (generalized vs Markovian loop): max |diff| {:.3e}  {}",
        reduction.max_diff(),
        if reduction.pass() { "PASS" } else { "FAIL" }
    );
    write_file(&dir.join("identities.txt"), text.as_bytes())?;
    write_file(&dir.join("identities.csv"), ids.to_csv().as_bytes())?;
    summary.push_str(&text);
    pass &= ids.pass() && reduction.pass();

    let marg = marginal_suite(
        &default_marginal_cases(),
        v.marginal_trajectories,
        v.seed,
        mutate,
    )?;
    write_file(&dir.join("marginal.txt"), marg.to_text().as_bytes())?;
    write_file(&dir.join("marginal.csv"), marg.to_csv().as_bytes())?;
    summary.push_str(&marg.to_text());
    pass &= marg.pass();

    let model = ctx.cfg.predictor.pair_model()?;
    let mut e2e_text = String::new();
    let mut e2e_csv = String::new();
    for &steps in &v.end_to_end_steps {
        let s = generation_schedule(ctx, steps)?;
        let mut reps = Vec::new();
        for policy in [GnPolicy::I2sbEquivalent, GnPolicy::StepFunction { r: 0.2 }] {
            let mut sc = SamplerConfig::new(steps, policy, v.seed);
            if mutate {
                sc.mutation = SamplerMutation::ScaleB(1.01);
            }
            let rep = end_to_end_gaussian(model, &s, &sc, v.end_to_end_samples)?;
            e2e_text.push_str(&rep.to_text());
            let csv = rep.to_csv();
            e2e_csv.push_str(if e2e_csv.is_empty() {
                &csv
            } else {
                csv.split_once('\n').map_or("", |p| p.1)
            });
            pass &= rep.pass();
            reps.push(rep);
        }
        let cross = reps[0].compare(&reps[1])?;
        let ok = cross <= END_TO_END_Z;
        let _ = writeln!(
            e2e_text,
            "policies agree at N = {steps}: max |z| {cross:.3}  {}",
            if ok { "PASS" } else { "FAIL" }
        );
        pass &= ok;
    }
    write_file(&dir.join("end_to_end.txt"), e2e_text.as_bytes())?;
    write_file(&dir.join("end_to_end.csv"), e2e_csv.as_bytes())?;
    summary.push_str(&e2e_text);
    let _ = writeln!(summary, "overall: {}", if pass { "PASS" } else { "FAIL" });
    write_file(&dir.join("summary.txt"), summary.as_bytes())?;
    Ok(VerifyOutcome { pass, summary })
}
