use std::path::Path;
use std::process::Command;

mod common;

use lesion::fixtures::{self, fixture_path, CORPUS_FILE, PROBE_FILE};

fn lesion() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lesion"))
}

fn with_fixture(cmd: &mut Command) -> &mut Command {
    cmd.arg("--model")
        .arg(fixture_path(fixtures::one_layer().file))
        .arg("--probe")
        .arg(fixture_path(PROBE_FILE))
}

#[test]
fn identify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = with_fixture(lesion().arg("identify"))
        .arg("--out-dir")
        .arg(dir.path().join("ok"))
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));

    let diverged = lesion()
        .arg("identify")
        .arg("--model")
        .arg(fixture_path(fixtures::two_layer().file))
        .arg("--probe")
        .arg(fixture_path(PROBE_FILE))
        .args(["--epsilon", "50", "--out-dir"])
        .arg(dir.path().join("div"))
        .status()
        .unwrap();
    assert_eq!(diverged.code(), Some(3));
    let report = std::fs::read_to_string(dir.path().join("div/report.json")).unwrap();
    assert!(report.contains("\"converged\": false"));

    let failed = lesion()
        .args(["identify", "--model", "missing.nlf", "--probe"])
        .arg(fixture_path(PROBE_FILE))
        .output()
        .unwrap();
    assert_eq!(failed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("missing.nlf"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"model": {:?}, "probe": {:?}, "epsilon": 50.0, "samples": 10}}"#,
            fixture_path(fixtures::two_layer().file),
            fixture_path(PROBE_FILE)
        ),
    )
    .unwrap();
    let from_file = lesion()
        .arg("identify")
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path().join("a"))
        .status()
        .unwrap();
    assert_eq!(from_file.code(), Some(3));
    let overridden = lesion()
        .arg("identify")
        .arg("--config")
        .arg(&config)
        .args(["--epsilon", "1", "--out-dir"])
        .arg(dir.path().join("b"))
        .status()
        .unwrap();
    assert_eq!(overridden.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("b/report.json")).unwrap();
    assert!(report.contains("\"k_samples\": 10"));
}

#[test]
fn table_subcommands_write_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let id = with_fixture(lesion().arg("identify"))
        .arg("--out-dir")
        .arg(d.join("id"))
        .status()
        .unwrap();
    assert!(id.success());

    let runs: Vec<(&str, Vec<String>)> = vec![
        ("phase-curve", vec!["--n-max".into(), "6".into()]),
        (
            "sweep-beta",
            vec![
                "--set".into(),
                d.join("id/report.json").display().to_string(),
            ],
        ),
        ("sweep-params", vec!["--ks".into(), "10,20".into()]),
        (
            "threshold-table",
            vec![
                "--epsilons".into(),
                "0.5,1,2".into(),
                "--budget".into(),
                "3".into(),
            ],
        ),
        (
            "baseline",
            vec![
                "--strategy".into(),
                "random".into(),
                "--n-max".into(),
                "4".into(),
                "--trials".into(),
                "3".into(),
            ],
        ),
        ("sweep-length", vec!["--lengths".into(), "10,20,30".into()]),
    ];
    for (cmd, extra) in runs {
        let out = d.join(format!("{cmd}.csv"));
        let status = with_fixture(lesion().arg(cmd))
            .args(&extra)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(
            matches!(status.code(), Some(0) | Some(3)),
            "{cmd}: {status:?}"
        );
        assert!(out.exists() && out.with_extension("json").exists(), "{cmd}");
    }
    let table = std::fs::read_to_string(d.join("threshold-table.csv")).unwrap();
    assert!(
        table.lines().last().unwrap().starts_with("2,3+,"),
        "{table}"
    );
    let beta = std::fs::read_to_string(d.join("sweep-beta.csv")).unwrap();
    assert_eq!(beta.lines().count(), 9);
}

#[test]
fn eval_ppl_with_mask() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture_path(fixtures::two_layer().file);
    let id = lesion()
        .arg("identify")
        .arg("--model")
        .arg(&model)
        .arg("--probe")
        .arg(fixture_path(PROBE_FILE))
        .arg("--out-dir")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(id.success());
    let out = lesion()
        .arg("eval-ppl")
        .arg("--model")
        .arg(&model)
        .arg("--corpus")
        .arg(fixture_path(CORPUS_FILE))
        .arg("--mask")
        .arg(dir.path().join("report.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["masked_neurons"], common::EXPECTED_N_STAR_2L);
    assert!(v["ppl_masked"].as_f64().unwrap() > v["ppl_original"].as_f64().unwrap());
}

#[test]
fn gen_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nlf");
    let status = lesion()
        .args([
            "gen-model",
            "--layers",
            "1",
            "--dim",
            "8",
            "--heads",
            "2",
            "--mlp-dim",
            "16",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&path)
        .status()
        .unwrap();
    assert!(status.success());
    let m = lesion::model::load_model(Path::new(&path)).unwrap();
    assert_eq!(m.config().d_mlp, 16);
}
