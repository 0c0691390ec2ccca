use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn beamfix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamfix"))
        .args(args)
        .env_remove("BEAMFIX_SEED")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.json");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{
  "num_samples": {"L2R": 200},
  "noise_levels": [0.5, 1.0],
  "models": {"txid": {"epochs": 10}, "denoiser": {"epochs": 10}}
}"#;

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn default_simulate_writes_six_files_per_direction() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("data");
    let run = beamfix(&["simulate", "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let mut csvs: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    csvs.sort();
    assert_eq!(
        csvs,
        [
            "L2R_clean.csv",
            "L2R_rms0.1.csv",
            "L2R_rms0.5.csv",
            "L2R_rms1.csv",
            "L2R_rms2.csv",
            "L2R_rms3.csv",
            "R2L_clean.csv",
            "R2L_rms0.1.csv",
            "R2L_rms0.5.csv",
            "R2L_rms1.csv",
            "R2L_rms2.csv",
            "R2L_rms3.csv",
        ]
    );
    for name in &csvs {
        let expected = if name.starts_with("L2R") { 1353 } else { 1086 };
        assert_eq!(data_rows(&out.join(name)), expected, "{name}");
    }
    assert_eq!(stdout(&run).lines().count(), 12);
}

#[test]
fn simulate_is_byte_identical_and_seed_flag_beats_env() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = tmp.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_beamfix"));
        cmd.env_remove("BEAMFIX_SEED");
        if let Some(v) = env {
            cmd.env("BEAMFIX_SEED", v);
        }
        if let Some(v) = flag {
            cmd.args(["--seed", v]);
        }
        let status = cmd
            .args(["simulate", "--config", s(&cfg), "--out", s(&out)])
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(out.join("L2R_rms0.5.csv")).unwrap()
    };
    let a = run("a", None, None);
    assert_eq!(a, run("b", None, None));
    let env_only = run("c", Some("5"), None);
    assert_ne!(a, env_only);
    assert_eq!(env_only, run("d", None, Some("5")));
    assert_eq!(run("e", Some("5"), Some("6")), run("f", None, Some("6")));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    for body in [
        r#"{"grid_count": 0}"#,
        r#"{"noise_levels": [-0.5]}"#,
        r#"{"scene": "missing.json"}"#,
        r#"{"grid_count": "#,
        r#"{"unknown": 1}"#,
    ] {
        let cfg = write_config(tmp.path(), body);
        let run = beamfix(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&tmp.path().join("o")),
        ]);
        assert_eq!(code(&run), 2, "{body}: {}", stderr(&run));
    }
    let run = beamfix(&["characterize", s(&tmp.path().join("nope.csv"))]);
    assert_eq!(code(&run), 2);
    assert_eq!(code(&beamfix(&["simulate", "--bogus"])), 2);
}

#[test]
fn unparseable_dataset_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("broken.csv");
    fs::write(&path, "id,direction\n1,sideways\n").unwrap();
    let run = beamfix(&["characterize", s(&path), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
}

#[test]
fn help_documents_defaults() {
    for sub in ["simulate", "characterize", "train", "evaluate", "pipeline"] {
        let run = beamfix(&[sub, "--help"]);
        assert_eq!(code(&run), 0);
        let text = stdout(&run);
        assert!(text.contains("--seed"), "{sub}");
        assert!(
            text.contains("default") || text.contains("defaults"),
            "{sub}: {text}"
        );
    }
    assert!(stdout(&beamfix(&["characterize", "--help"])).contains("[default: 100]"));
}

#[test]
fn characterize_reports_fit_or_notice() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"num_samples": {"R2L": 1086}, "noise_levels": [0.3]}"#,
    );
    let data = tmp.path().join("data");
    assert_eq!(
        code(&beamfix(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&data)
        ])),
        0
    );
    let out = tmp.path().join("char");

    let run = beamfix(&[
        "characterize",
        s(&data.join("R2L_clean.csv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(stdout(&run).contains("notice: Gaussian fit skipped"));
    let clean: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("R2L_clean_fit.json")).unwrap()).unwrap();
    assert!(clean["fit"].is_null());

    let run = beamfix(&[
        "characterize",
        s(&data.join("R2L_rms0.3.csv")),
        "--out",
        s(&out),
        "--per-sample",
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("R2L_rms0.3_fit.json")).unwrap())
            .unwrap();
    assert_eq!(fit["grid_count"], 100);
    assert_eq!(fit["positions"], "noisy");
    let adj = fit["fit"]["adjusted_r_squared"].as_f64().unwrap();
    assert!(adj > 0.0 && adj <= 1.0);
    let pergrid = fs::read_to_string(out.join("R2L_rms0.3_pergrid.csv")).unwrap();
    assert!(pergrid.starts_with("grid,count,mean_lat,mean_lon,avg_displacement_m\n"));
    assert_eq!(data_rows(&out.join("R2L_rms0.3_samples.csv")), 1086);
}

#[test]
fn train_records_checks_and_replays_from_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    assert_eq!(
        code(&beamfix(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&data)
        ])),
        0
    );
    let dataset = data.join("L2R_rms0.5.csv");

    let first = tmp.path().join("m1");
    let run = beamfix(&[
        "train",
        s(&dataset),
        "--config",
        s(&cfg),
        "--out",
        s(&first),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let dir = first.join("L2R_rms0.5");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["train_samples"], 140);
    assert_eq!(manifest["test_samples"], 60);
    assert!(manifest["gradient_check"]["txid"].as_f64().unwrap() < 1e-4);
    assert!(manifest["gradient_check"]["denoiser"].as_f64().unwrap() < 1e-4);
    assert_eq!(data_rows(&dir.join("txid_loss.csv")), 10);

    let second = tmp.path().join("m2");
    let run = beamfix(&[
        "train",
        s(&dataset),
        "--manifest",
        s(&dir.join("manifest.json")),
        "--out",
        s(&second),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for f in ["txid.json", "denoiser.json", "lut.csv", "manifest.json"] {
        assert_eq!(
            fs::read(dir.join(f)).unwrap(),
            fs::read(second.join("L2R_rms0.5").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_transmitter_labels_are_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    assert_eq!(
        code(&beamfix(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&data)
        ])),
        0
    );
    let path = data.join("L2R_rms0.5.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for i in [3, 8] {
        lines[i] = lines[i].replace(",TX,", ",DISTRACTOR,");
    }
    let ids: Vec<&str> = [3, 8]
        .iter()
        .map(|&i| lines[i].split(',').next().unwrap())
        .collect();
    let ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let run = beamfix(&[
        "train",
        s(&path),
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(code(&run), 2);
    let err = stderr(&run);
    assert!(err.contains(&format!("{}, {}", ids[0], ids[1])), "{err}");
}

#[test]
fn diverging_training_exits_with_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"num_samples": {"L2R": 100}, "noise_levels": [0.5],
            "models": {"txid": {"epochs": 20, "learning_rate": 1e300}}}"#,
    );
    let data = tmp.path().join("data");
    assert_eq!(
        code(&beamfix(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&data)
        ])),
        0
    );
    let run = beamfix(&[
        "train",
        s(&data.join("L2R_rms0.5.csv")),
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(code(&run), 1, "{}", stderr(&run));
    assert!(stderr(&run).contains("diverged"));
}

#[test]
fn evaluate_rejects_codebook_mismatch() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let data = tmp.path().join("data");
    assert_eq!(
        code(&beamfix(&[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&data)
        ])),
        0
    );
    let models = tmp.path().join("models");
    let dataset = data.join("L2R_rms0.5.csv");
    assert_eq!(
        code(&beamfix(&[
            "train",
            s(&dataset),
            "--config",
            s(&cfg),
            "--out",
            s(&models)
        ])),
        0
    );

    let narrow = write_config(
        &tmp.path().join("data"),
        r#"{"num_samples": {"L2R": 200}, "noise_levels": [0.5], "num_beams": 32}"#,
    );
    let other = tmp.path().join("narrow");
    assert_eq!(
        code(&beamfix(&[
            "simulate",
            "--config",
            s(&narrow),
            "--out",
            s(&other)
        ])),
        0
    );
    let run = beamfix(&[
        "evaluate",
        s(&other.join("L2R_rms0.5.csv")),
        "--models",
        s(&models),
        "--out",
        s(&tmp.path().join("eval")),
    ]);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
    assert!(stderr(&run).contains("codebook size"));
}

#[test]
fn pipeline_emits_comparison_and_plot_data() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"num_samples": {"L2R": 200}, "models": {"txid": {"epochs": 5}, "denoiser": {"epochs": 5}}}"#,
    );
    let out = tmp.path().join("run");
    let run = beamfix(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let table = fs::read_to_string(out.join("eval/comparison_L2R.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "noise_rms_m,noisy_m,lut_m,mlp_m");
    assert_eq!(lines.len(), 6);
    let positions = fs::read_to_string(out.join("eval/L2R_rms0.5/positions.csv")).unwrap();
    assert!(positions.starts_with("sample_id,kind,lat,lon\n"));
    // 60 test samples with ground truth and three methods each.
    assert_eq!(positions.lines().count() - 1, 60 * 4);
    for kind in ["gt", "noisy", "denoised_lut", "denoised_mlp"] {
        assert!(positions.contains(&format!(",{kind},")));
    }
    assert!(out.join("eval/L2R_rms0.5/pergrid.csv").is_file());
    assert!(out.join("eval/L2R_rms0.5/histogram.csv").is_file());
    assert!(out.join("characterize/L2R_rms0.5_fit.json").is_file());
}
