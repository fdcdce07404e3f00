//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{gradient_check, gradient_fixture, random_image, ssim_reference, FD_REL_TOL};
use i3sb::cli::{
    cmd_eval, cmd_gen_data, cmd_sample, cmd_train, Context, BASELINE_METHOD, RESULTS_ENV,
};
use i3sb::config::ExperimentConfig;
use i3sb::diagnostics::{
    coeff_identity_suite, default_marginal_cases, end_to_end_gaussian, i2sb_reduction_check,
    marginal_suite, oracle_regression_suite, CoeffMutation, END_TO_END_Z, IDENTITY_TOL,
};
use i3sb::metrics::{haralick_distance, ssim, GlcmConfig};
use i3sb::predictor::MlpShape;
use i3sb::{GnPolicy, SamplerConfig, Schedule};

const SEED: u64 = 7;
const REDUCTION_TOL: f64 = 1e-9;
const MARGINAL_TRAJECTORIES: usize = 100_000;
const ORACLE_CASES: usize = 5;
const ORACLE_SAMPLES: usize = 1_000_000;
const END_TO_END_SAMPLES: usize = 100_000;
const LOSS_DROP: f64 = 0.5;
const SSIM_ORACLE_TOL: f64 = 1e-6;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn identities() -> Outcome {
    let base = coeff_identity_suite(1000, SEED, CoeffMutation::None).map_err(err)?;
    let mut detected = Vec::new();
    for m in [CoeffMutation::A, CoeffMutation::B, CoeffMutation::C] {
        let r = coeff_identity_suite(1000, SEED, m).map_err(err)?;
        detected.push((m, !r.pass()));
    }
    check(
        base.pass() && base.max_violation() < IDENTITY_TOL && detected.iter().all(|d| d.1),
        format!(
            "max violation {:.2e}; mutations detected {detected:?}",
            base.max_violation()
        ),
    )
}

fn reduction() -> Outcome {
    let r = i2sb_reduction_check(&[4, 20, 100], 256, SEED).map_err(err)?;
    check(
        r.max_diff() < REDUCTION_TOL,
        format!("max |diff| {:.2e} over {:?}", r.max_diff(), r.cases),
    )
}

fn marginals() -> Outcome {
    let cases = default_marginal_cases();
    let r = marginal_suite(&cases, MARGINAL_TRAJECTORIES, SEED, false).map_err(err)?;
    check(
        r.pass(),
        format!(
            "{} cases, M = {MARGINAL_TRAJECTORIES}, max |z| {:.3}",
            cases.len(),
            r.max_abs_z()
        ),
    )
}

fn oracle() -> Outcome {
    let r = oracle_regression_suite(ORACLE_CASES, ORACLE_SAMPLES, SEED).map_err(err)?;
    let worst = r.cases.iter().map(|c| c.z().abs()).fold(0.0, f64::max);
    check(
        r.pass(),
        format!("{ORACLE_CASES} configs, M = {ORACLE_SAMPLES}, max |z| {worst:.3}"),
    )
}

fn end_to_end() -> Outcome {
    let cfg = ExperimentConfig::default();
    let model = cfg.predictor.pair_model().map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for steps in [20, 100] {
        let s = Schedule::new(
            cfg.beta().map_err(err)?,
            steps,
            cfg.schedule.spacing,
            cfg.schedule.t_min,
        )
        .map_err(err)?;
        for policy in [GnPolicy::I2sbEquivalent, GnPolicy::StepFunction { r: 0.2 }] {
            let sc = SamplerConfig::new(steps, policy, SEED);
            let rep = end_to_end_gaussian(model, &s, &sc, END_TO_END_SAMPLES).map_err(err)?;
            worst = worst.max(rep.max_abs_z());
            ok &= rep.pass();
        }
    }
    check(
        ok,
        format!("N in {{20, 100}}, both policies, max |z| {worst:.3} (limit {END_TO_END_Z})"),
    )
}

struct Pipeline {
    _dir: tempfile::TempDir,
    ctx: Context,
    losses: Vec<(usize, f64)>,
    train_time: Duration,
}

/// Default toy denoising setup, sampled at N = 20 only.
fn pipeline() -> Result<Pipeline, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = ExperimentConfig::default();
    cfg.sampler.steps = vec![20];
    let ctx = Context::new(cfg, dir.path());
    cmd_gen_data(&ctx, false).map_err(err)?;
    let t = Instant::now();
    let losses = cmd_train(&ctx).map_err(err)?.losses;
    let train_time = t.elapsed();
    cmd_sample(&ctx).map_err(err)?;
    Ok(Pipeline {
        _dir: dir,
        ctx,
        losses,
        train_time,
    })
}

fn training(p: &Result<Pipeline, String>) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
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
                patch: 5,
                hidden: 16,
            },
            2,
        ),
    ] {
        let (net, batch) = gradient_fixture(shape, seed);
        let r = gradient_check(&net, &batch);
        worst = worst.max(r.max_rel);
        skipped += r.skipped;
    }
    let p = p.as_ref().map_err(Clone::clone)?;
    let at = |i: usize| p.losses.iter().find(|l| l.0 == i).map(|l| l.1);
    let first = at(100).ok_or("no loss logged at iteration 100")?;
    let last = p.losses.last().ok_or("no losses logged")?;
    let ratio = last.1 / first;
    check(
        worst < FD_REL_TOL && ratio <= LOSS_DROP,
        format!(
            "gradient max rel err {worst:.2e} ({skipped} params skipped at ReLU kinks); \
             loss {first:.4} @100 -> {:.4} @{} (ratio {ratio:.3}, train {:.1}s)",
            last.1,
            last.0,
            p.train_time.as_secs_f64()
        ),
    )
}

fn restoration(p: &Result<Pipeline, String>) -> Outcome {
    let p = p.as_ref().map_err(Clone::clone)?;
    let eval = cmd_eval(&p.ctx).map_err(err)?;
    let base = eval
        .mean(BASELINE_METHOD, 0)
        .ok_or("missing baseline row")?;
    let mut parts = vec![format!(
        "corrupted ssim {:.4} haralick {:.4}",
        base.ssim, base.haralick_distance
    )];
    let mut ok = true;
    for policy in &p.ctx.cfg.sampler.policies {
        let row = eval
            .mean(&policy.label(), 20)
            .ok_or("missing restored row")?;
        ok &= row.ssim > base.ssim && row.haralick_distance < base.haralick_distance;
        parts.push(format!(
            "{} ssim {:.4} haralick {:.4}",
            row.method, row.ssim, row.haralick_distance
        ));
    }
    check(ok, parts.join("; "))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.display().to_string(), fs::read(&p).unwrap_or_default()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(p: &Result<Pipeline, String>) -> Outcome {
    let p = p.as_ref().map_err(Clone::clone)?;
    let samples = p.ctx.root.join("samples");
    let before = snapshot(&samples);
    cmd_sample(&p.ctx).map_err(err)?;
    let identical = before == snapshot(&samples);

    let out = tempfile::tempdir().map_err(err)?;
    let run = |mutate: bool| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_i3sb"));
        c.arg("verify").env(RESULTS_ENV, out.path());
        if mutate {
            c.arg("--mutate");
        }
        c.output().map(|o| o.status.code())
    };
    let clean = run(false).map_err(err)?;
    let mutated = run(true).map_err(err)?;
    check(
        identical && clean == Some(0) && mutated == Some(1),
        format!(
            "resample identical over {} files: {identical}; verify exit {clean:?}, --mutate exit {mutated:?}",
            before.len()
        ),
    )
}

fn metrics() -> Outcome {
    let glcm = GlcmConfig::default();
    let mut worst_self: f64 = 0.0;
    for i in 0..100 {
        let a = random_image(32, SEED, i);
        worst_self = worst_self.max((ssim(&a, &a, 2.0).map_err(err)? - 1.0).abs());
        worst_self = worst_self.max(haralick_distance(&a, &a, &glcm).map_err(err)?.abs());
    }
    let mut worst_ref: f64 = 0.0;
    for i in 0..10 {
        let a = random_image(32, SEED + 1, 2 * i);
        let b = random_image(32, SEED + 1, 2 * i + 1);
        worst_ref =
            worst_ref.max((ssim(&a, &b, 2.0).map_err(err)? - ssim_reference(&a, &b, 2.0)).abs());
    }
    check(
        worst_self == 0.0 && worst_ref < SSIM_ORACLE_TOL,
        format!("self-comparison max deviation {worst_self:.1e}; ssim vs reference max |diff| {worst_ref:.2e}"),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS  {id}. {name} [{secs:.1}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {id}. {name} [{secs:.1}s]: {msg}");
            }
        }
    };
    report(1, "coefficient identities", &mut identities);
    report(2, "Markovian reduction", &mut reduction);
    report(3, "marginal preservation", &mut marginals);
    report(4, "oracle optimality", &mut oracle);
    report(5, "end-to-end Gaussian restoration", &mut end_to_end);
    let t = Instant::now();
    let p = pipeline();
    println!(
        "      (toy pipeline setup {:.1}s)",
        t.elapsed().as_secs_f64()
    );
    report(6, "training sanity", &mut || training(&p));
    report(7, "restoration beats corrupted input", &mut || {
        restoration(&p)
    });
    report(8, "determinism and verify exit codes", &mut || {
        determinism(&p)
    });
    report(9, "metric correctness", &mut metrics);
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
