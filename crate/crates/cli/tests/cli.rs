use regforge::imgcore::io::{read_image, read_mask, read_sidecar, record_reads};
use regforge::metrics::{aggregate_table, read_csv, AggregateRow, Stage, Summary};
use regforge::synthdata::{load_case, LoadOptions};
use regforge::transform::{displacement_field, AffineParams, TpsBasis, Transform2D, DEFAULT_TPS_MARGIN};
use regforge_cli::manifest::{hash_outputs, RunManifest};
use regforge_cli::*;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, OnceLock};

fn run_in(args: &[&str]) -> i32 {
    run(std::iter::once("regforge").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cohort(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("data_{n}_{seed}"));
    assert_eq!(run_in(&["gen-phantoms", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]), 0);
    out
}

/// A small model shared by the registration tests.
fn model() -> &'static (tempfile::TempDir, PathBuf, PathBuf) {
    static M: OnceLock<(tempfile::TempDir, PathBuf, PathBuf)> = OnceLock::new();
    M.get_or_init(|| {
        let t = tempfile::tempdir().unwrap();
        let data = cohort(t.path(), 16, 3);
        let run = t.path().join("run");
        assert_eq!(run_in(&["train", "--data", s(&data), "--out", s(&run), "--epochs", "10", "--seed", "1"]), 0);
        (t, data, run)
    })
}

#[test]
fn gen_phantoms_layout_and_repeatability() {
    let t = tempfile::tempdir().unwrap();
    let a = cohort(t.path(), 4, 7);
    let b = t.path().join("again");
    assert_eq!(run_in(&["gen-phantoms", "--n", "4", "--seed", "7", "--out", s(&b)]), 0);
    for k in 0..4 {
        let case = a.join(format!("case_{k:03}"));
        for f in ["fixed.png", "fixed.json", "moving.png", "moving.json", "fixed_mask.png", "moving_mask.png", "landmarks.json", "cancer_label.png", "manifest.json"] {
            assert!(case.join(f).is_file(), "{f}");
        }
    }
    assert!(a.join("manifest.json").is_file());
    let (ma, mb) = (RunManifest::read(&a).unwrap(), RunManifest::read(&b).unwrap());
    assert_eq!(ma.outputs.len(), 4 * 9 + 1);
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(hash_outputs(&a).unwrap(), hash_outputs(&b).unwrap());
    assert_eq!((ma.command.as_str(), ma.seed), ("gen-phantoms", 7));
    assert_eq!(ma.config_hash, mb.config_hash);
}

#[test]
fn usage_and_runtime_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(run_in(&["gen-phantoms", "--n", "0", "--out", s(t.path())]), 2);
    assert_eq!(run_in(&["gen-phantoms", "--n", "2"]), 2);
    assert_eq!(run_in(&["frobnicate"]), 2);
    assert_eq!(run_in(&["--help"]), 0);
    let file = t.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    assert_eq!(run_in(&["gen-phantoms", "--n", "1", "--out", s(&file.join("sub"))]), 1);
    let typo = t.path().join("typo.json");
    std::fs::write(&typo, r#"{"spec": {"window_mm": 90}}"#).unwrap();
    assert_eq!(run_in(&["gen-phantoms", "--n", "1", "--out", s(&t.path().join("o")), "--config", s(&typo)]), 2);
    let bad = t.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run_in(&["gen-phantoms", "--n", "1", "--out", s(&t.path().join("o")), "--config", s(&bad)]), 2);
}

#[test]
fn seed_defaults_to_environment() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    let status = Command::new(env!("CARGO_BIN_EXE_regforge"))
        .args(["gen-phantoms", "--n", "1", "--out", s(&out)])
        .env("REGFORGE_SEED", "42")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(RunManifest::read(&out).unwrap().seed, 42);
    let status = Command::new(env!("CARGO_BIN_EXE_regforge"))
        .args(["gen-phantoms", "--n", "1", "--out", s(&out)])
        .env("REGFORGE_SEED", "not-a-number")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_defaults_checkpoints_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let data = cohort(t.path(), 4, 5);
    let args = TrainArgs {
        data: data.clone(),
        out: t.path().join("unused"),
        lr: None,
        decay: None,
        batch_size: None,
        epochs: None,
        seed: None,
        working_resolution_mm: None,
        window_mm: 100.0,
        config: None,
    };
    let cfg = args.resolve().unwrap();
    assert_eq!((cfg.lr0, cfg.lr_decay, cfg.epochs, cfg.batch_size), (0.001, 0.9, 50, 1));

    let runs: Vec<PathBuf> = (0..2).map(|k| t.path().join(format!("run{k}"))).collect();
    for r in &runs {
        assert_eq!(run_in(&["train", "--data", s(&data), "--out", s(r), "--epochs", "1", "--seed", "3"]), 0);
    }
    let ckpts: Vec<_> = std::fs::read_dir(runs[0].join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(ckpts.len(), 2, "{ckpts:?}");
    let m = RunManifest::read(&runs[0]).unwrap();
    assert_eq!(m.config["lr0"], 0.001);
    assert_eq!(m.config["lr_decay"], 0.9);
    assert_eq!(m.config["batch_size"], 1);
    assert_eq!(m.config["epochs"], 1);
    assert_eq!(m.outputs, RunManifest::read(&runs[1]).unwrap().outputs);
    for f in ["affine.rgfn", "deform.rgfn"] {
        assert_eq!(std::fs::read(runs[0].join(f)).unwrap(), std::fs::read(runs[1].join(f)).unwrap());
    }

    let cfg_file = t.path().join("cfg.json");
    std::fs::write(&cfg_file, r#"{"epochs": 7, "lr0": 0.01, "seed": 11}"#).unwrap();
    let resolved = TrainArgs { config: Some(cfg_file.clone()), lr: Some(0.002), ..args.clone() }.resolve().unwrap();
    assert_eq!((resolved.epochs, resolved.lr0, resolved.seed), (7, 0.002, 11));
    assert!(matches!(TrainArgs { batch_size: Some(4), ..args.clone() }.resolve(), Err(CliError::Usage(_))));
    assert_eq!(run_in(&["train", "--data", s(&data), "--out", s(&runs[0]), "--batch-size", "2"]), 2);
}

#[test]
fn train_names_the_malformed_case() {
    let t = tempfile::tempdir().unwrap();
    let data = cohort(t.path(), 3, 9);
    std::fs::remove_file(data.join("case_001").join("moving_mask.png")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_regforge"))
        .args(["train", "--data", s(&data), "--out", s(&t.path().join("run")), "--epochs", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("case_001"));
}

fn register_args(case: &Path, out: &Path) -> Vec<String> {
    ["register", "--fixed", s(&case.join("fixed.png")), "--moving", s(&case.join("moving.png")), "--out", s(out)]
        .iter()
        .map(|v| v.to_string())
        .collect()
}

fn run_owned(args: &[String]) -> i32 {
    run(std::iter::once("regforge".to_string()).chain(args.iter().cloned()))
}

/// A phantom whose moving image carries no misalignment, so the true transform is the identity.
#[test]
fn self_registration_is_near_identity() {
    let (_, _, model_dir) = model();
    let t = tempfile::tempdir().unwrap();
    let spec = t.path().join("aligned.json");
    let none = r#"{"misalignment": {"rotation_max_deg": 0, "scale_range": [1, 1], "translation_max_mm": 0, "shear_max": 0, "tps_jitter_max_mm": 0}}"#;
    std::fs::write(&spec, none).unwrap();
    let data = t.path().join("aligned");
    assert_eq!(run_in(&["gen-phantoms", "--n", "1", "--seed", "5", "--out", s(&data), "--config", s(&spec)]), 0);
    let case = data.join("case_000");
    let out = t.path().join("self");
    let mut args = register_args(&case, &out);
    args.extend(["--model".into(), s(model_dir).into()]);
    assert_eq!(run_owned(&args), 0);
    let (_, composite) = RegistrationJson::read(&out.join(TRANSFORMS_JSON)).unwrap();
    let grid = *read_image::<f64>(&out.join(WARPED_MOVING_PNG)).unwrap().grid();
    let d = displacement_field(&composite, &grid).max_norm();
    assert!(d < 0.5, "max displacement {d} mm");
}

#[test]
fn model_registration_outputs_without_masks() {
    let (_, data, model_dir) = model();
    let t = tempfile::tempdir().unwrap();
    let case = data.join("case_000");
    let out = t.path().join("reg");
    let mut args = register_args(&case, &out);
    args.extend(["--model".into(), s(model_dir).into(), "--cancer-label".into(), s(&case.join("cancer_label.png")).into()]);
    let (code, reads) = record_reads(|| run_owned(&args));
    assert_eq!(code, 0);
    assert!(reads.iter().any(|p| p.ends_with("affine.rgfn")));
    assert!(reads.iter().any(|p| p.ends_with("fixed.png")));
    assert!(!reads.iter().any(|p| p.file_name().unwrap().to_string_lossy().contains("mask")), "{reads:?}");
    for f in [TRANSFORMS_JSON, WARPED_MOVING_PNG, WARPED_LABEL_PNG, RUN_MANIFEST] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join(METRICS_CSV).exists());
    let side = read_sidecar(&out.join(WARPED_MOVING_PNG).with_extension("json")).unwrap();
    let fixed = load_case(&case, 100.0, LoadOptions::IMAGES_ONLY).unwrap();
    assert_eq!(side.origin_mm, fixed.i_f.grid().origin.to_array_f64());
    let label = read_mask(&out.join(WARPED_LABEL_PNG), fixed.i_f.grid()).unwrap();
    assert!(label.data().iter().any(|v| *v != 0));
}

#[test]
fn masks_given_to_model_registration_add_metrics() {
    let (_, data, model_dir) = model();
    let t = tempfile::tempdir().unwrap();
    let case = data.join("case_001");
    let out = t.path().join("reg");
    let mut args = register_args(&case, &out);
    for (k, v) in [
        ("--model", model_dir.clone()),
        ("--fixed-mask", case.join("fixed_mask.png")),
        ("--moving-mask", case.join("moving_mask.png")),
        ("--landmarks", case.join("landmarks.json")),
        ("--case-id", PathBuf::from("c1")),
    ] {
        args.extend([k.to_string(), s(&v).to_string()]);
    }
    assert_eq!(run_owned(&args), 0);
    let rows = read_csv(&out.join(METRICS_CSV)).unwrap();
    assert_eq!(rows.iter().map(|r| r.stage).collect::<Vec<_>>(), vec![Stage::Input, Stage::Affine, Stage::Composite]);
    assert!(rows.iter().all(|r| r.case_id == "c1" && r.landmark_err_mm.is_some()));
}

#[test]
fn direct_registration_requires_masks() {
    let (_, data, _) = model();
    let t = tempfile::tempdir().unwrap();
    let case = data.join("case_003");
    let mut args = register_args(&case, &t.path().join("a"));
    args.push("--direct".into());
    let out = Command::new(env!("CARGO_BIN_EXE_regforge")).args(&args[..]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("segmentations"));

    let dir = t.path().join("b");
    let mut args = register_args(&case, &dir);
    args.extend([
        "--direct".into(),
        "--fixed-mask".into(),
        s(&case.join("fixed_mask.png")).into(),
        "--moving-mask".into(),
        s(&case.join("moving_mask.png")).into(),
    ]);
    assert_eq!(run_owned(&args), 0);
    let rows = read_csv(&dir.join(METRICS_CSV)).unwrap();
    assert!(rows[2].dice > rows[0].dice);
    assert!(rows[0].landmark_err_mm.is_none());
    assert_eq!(RunManifest::read(&dir).unwrap().config["mode"], "direct");
}

fn write_transforms(root: &Path, id: &str, affine: &Transform2D<f64>, composite: &Transform2D<f64>) {
    let dir = root.join(id);
    std::fs::create_dir_all(&dir).unwrap();
    let j = RegistrationJson { affine: affine.to_json(), composite: composite.to_json() };
    std::fs::write(dir.join(TRANSFORMS_JSON), serde_json::to_string(&j).unwrap()).unwrap();
}

#[test]
fn evaluate_identity_and_aggregate() {
    let t = tempfile::tempdir().unwrap();
    let data = cohort(t.path(), 2, 13);
    let tr = t.path().join("transforms");
    let s0 = load_case(&data.join("case_000"), 100.0, LoadOptions::ALL).unwrap();
    let basis = Arc::new(TpsBasis::for_grid(s0.i_f.grid(), DEFAULT_TPS_MARGIN).unwrap());
    let id = Transform2D::identity_composite(basis.clone());
    write_transforms(&tr, "case_000", &Transform2D::identity_affine(), &id);
    let shift = Transform2D::Affine(AffineParams::new([0.0, 0.0, 2000.0, 0.0, 0.0, -1000.0], 0.001));
    write_transforms(&tr, "case_001", &shift, &shift);

    let out = t.path().join("eval");
    assert_eq!(run_in(&["evaluate", "--data", s(&data), "--transforms", s(&tr), "--out", s(&out)]), 0);
    let text = std::fs::read_to_string(out.join(METRICS_CSV)).unwrap();
    assert_eq!(text.lines().next().unwrap(), "case_id,stage,dice,hausdorff_mm,urethra_dev_mm,landmark_err_mm");
    let rows = read_csv(&out.join(METRICS_CSV)).unwrap();
    assert_eq!(rows.len(), 6);
    let (input, composite) = (&rows[0], &rows[2]);
    assert_eq!((input.dice, input.hausdorff_mm, input.landmark_err_mm), (composite.dice, composite.hausdorff_mm, composite.landmark_err_mm));

    let summary: Vec<AggregateRow> = serde_json::from_str(&std::fs::read_to_string(out.join(SUMMARY_JSON)).unwrap()).unwrap();
    assert_eq!(summary, aggregate_table(&rows));
    let comp = &summary[2];
    let (a, b) = (rows[2].dice, rows[5].dice);
    let mean = (a + b) / 2.0;
    let std = (((a - mean).powi(2) + (b - mean).powi(2)) / 2.0).sqrt();
    assert_eq!(comp.stage, Stage::Composite);
    assert!((comp.dice.mean - mean).abs() < 1e-15 && (comp.dice.std - std).abs() < 1e-15);
    assert_eq!(comp.dice.n, 2);
    let _: Option<Summary> = comp.landmark_err_mm;
}

#[test]
fn evaluate_tolerates_missing_landmarks() {
    let t = tempfile::tempdir().unwrap();
    let data = cohort(t.path(), 2, 17);
    std::fs::remove_file(data.join("case_001").join("landmarks.json")).unwrap();
    let out = t.path().join("eval");
    assert_eq!(run_in(&["evaluate", "--data", s(&data), "--direct", "--out", s(&out)]), 0);
    let rows = read_csv(&out.join(METRICS_CSV)).unwrap();
    assert!(rows[..3].iter().all(|r| r.landmark_err_mm.is_some()));
    assert!(rows[3..].iter().all(|r| r.landmark_err_mm.is_none() && r.urethra_dev_mm.is_none()));
    assert!(rows[5].dice > rows[3].dice);
    assert_eq!(run_in(&["evaluate", "--data", s(&data), "--out", s(&out)]), 2);
}
