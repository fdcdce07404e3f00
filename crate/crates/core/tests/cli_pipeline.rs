use std::fs;
use std::path::Path;
use std::process::Command;

use i3sb::cli::{
    cmd_eval, cmd_gen_data, cmd_sample, cmd_train, method_dir, Context, GenDataOutcome,
    BASELINE_METHOD, RESULTS_ENV,
};
use i3sb::config::{ExperimentConfig, PredictorKind};
use i3sb::tensor_io::read_tensor;
use i3sb::GnPolicy;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.train_count = 3;
    cfg.dataset.test_count = 2;
    cfg.dataset.size = 16;
    cfg.predictor.kind = PredictorKind::Cheat;
    cfg.sampler.steps = vec![8];
    cfg.sampler.policies = vec![GnPolicy::StepFunction { r: 0.2 }];
    cfg.verify.identity_trials = 200;
    cfg.verify.marginal_trajectories = 20_000;
    cfg.verify.end_to_end_samples = 20_000;
    cfg.verify.end_to_end_steps = vec![10];
    cfg
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn gen_data_is_idempotent_and_detects_drift() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(small_config(), dir.path());
    let first = cmd_gen_data(&ctx, false).unwrap();
    assert!(matches!(first, GenDataOutcome::Written { .. }));
    let again = cmd_gen_data(&ctx, false).unwrap();
    assert!(matches!(again, GenDataOutcome::Unchanged { .. }));
    assert_eq!(first.manifest_hash(), again.manifest_hash());

    let other = tempfile::tempdir().unwrap();
    let elsewhere = cmd_gen_data(&Context::new(small_config(), other.path()), false).unwrap();
    assert_eq!(first.manifest_hash(), elsewhere.manifest_hash());

    let mut changed = small_config();
    changed.degrade.seed += 1;
    let ctx2 = Context::new(changed, dir.path());
    let err = cmd_gen_data(&ctx2, false).unwrap_err().to_string();
    assert!(err.contains("force"), "{err}");
    let forced = cmd_gen_data(&ctx2, true).unwrap();
    assert!(matches!(forced, GenDataOutcome::Written { .. }));
    assert_ne!(forced.manifest_hash(), first.manifest_hash());
}

#[test]
fn invalid_config_and_resume_are_rejected() {
    let mut cfg = small_config();
    cfg.dataset.size = 18;
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("dataset.size"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.predictor.kind = PredictorKind::Mlp;
    cfg.predictor.resume = true;
    let ctx = Context::new(cfg, dir.path());
    cmd_gen_data(&ctx, false).unwrap();
    assert!(cmd_train(&ctx).unwrap_err().to_string().contains("resume"));
}

#[test]
fn cheat_pipeline_restores_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(small_config(), dir.path());
    cmd_gen_data(&ctx, false).unwrap();
    assert!(cmd_train(&ctx).unwrap().losses.is_empty());

    let out = cmd_sample(&ctx).unwrap();
    assert!(!out.written.is_empty());
    let method = method_dir(&GnPolicy::StepFunction { r: 0.2 }, 8);
    let sample_dir = dir.path().join("samples").join(&method);
    for i in 0..2 {
        let restored = read_tensor(sample_dir.join(format!("{i:04}.bstn"))).unwrap();
        let clean = read_tensor(dir.path().join(format!("data/test/clean/{i:04}.bstn"))).unwrap();
        for (a, b) in restored.data().iter().zip(clean.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
    let before = read_dir_bytes(&sample_dir);
    cmd_sample(&ctx).unwrap();
    assert_eq!(before, read_dir_bytes(&sample_dir));

    let eval = cmd_eval(&ctx).unwrap();
    let base = eval.mean(BASELINE_METHOD, 0).unwrap();
    let ours = eval
        .mean(&GnPolicy::StepFunction { r: 0.2 }.label(), 8)
        .unwrap();
    assert!(ours.ssim > 0.999 && ours.ssim > base.ssim);
    assert!(ours.rmse < 1e-5);
    assert!(eval
        .csv
        .starts_with("image_id,method,N,ssim,haralick_distance,rmse"));
    assert!(dir.path().join("eval/metrics.csv").exists());

    fs::remove_file(sample_dir.join("0001.bstn")).unwrap();
    let err = cmd_eval(&ctx).unwrap_err().to_string();
    assert!(err.contains("0001"), "{err}");
}

#[test]
fn binary_verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, small_config().to_toml().unwrap()).unwrap();
    let results = dir.path().join("out");
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_i3sb"))
            .arg("--config")
            .arg(&cfg_path)
            .arg("verify")
            .args(extra)
            .env(RESULTS_ENV, &results)
            .output()
            .unwrap()
    };
    let ok = run(&[]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    assert!(results.join("verify/summary.txt").exists());
    let bad = run(&["--mutate"]);
    assert_eq!(bad.status.code(), Some(1));

    fs::write(&cfg_path, "[dataset]\nsize = 18\n").unwrap();
    let err = run(&[]);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("dataset.size"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = ExperimentConfig::load(root.join("default.toml")).unwrap();
    assert_eq!(default, ExperimentConfig::default());
    let sr = ExperimentConfig::load(root.join("superres.toml")).unwrap();
    sr.validate().unwrap();
    assert_eq!(sr.sampler.steps, vec![20, 100]);
}
