use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lander-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn lander(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lander")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Collects a short standard flight into `dir/collect.csv`.
fn short_log(dir: &Path, seconds: &str) -> String {
    let out = lander(&["collect", "-o", s(dir), "--duration", seconds]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("collect.csv").display().to_string()
}

#[test]
fn invalid_config_is_refused_with_code_2() {
    let dir = scratch("invalid");
    let bad = write(&dir, "bad.toml", "[vehicle]\nmass = -1.0\n");
    let out = lander(&["fly", "-c", &bad, "-o", s(&dir)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("mass"));

    let unknown = write(&dir, "unknown.toml", "[gains]\nnot_a_gain = 1.0\n");
    assert_eq!(code(&lander(&["fly", "-c", &unknown, "-o", s(&dir)])), 2);
}

#[test]
fn oversized_gamma_is_refused_before_training() {
    let dir = scratch("gamma");
    let log = short_log(&dir, "5");
    let out = lander(&["train", "-o", s(&dir), "--log", &log, "--gamma", "1e6", "--epochs", "1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("contraction certificate violated"), "{}", stderr(&out));
    assert!(!dir.join("model.json").exists());
}

#[test]
fn divergence_exits_3_and_keeps_the_partial_log() {
    let dir = scratch("diverge");
    let cfg = write(
        &dir,
        "tumble.toml",
        "[field.torque]\namplitude = [40.0, 40.0, 40.0]\nwavenumber = 3.0\nseed = 1\n",
    );
    let out = lander(&["fly", "-c", &cfg, "-o", s(&dir), "--name", "tumble"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
    assert!(dir.join("tumble.csv").exists());
}

#[test]
fn missing_input_exits_4() {
    let dir = scratch("missing");
    let absent = dir.join("absent.csv");
    assert_eq!(code(&lander(&["evaluate", "--log", s(&absent)])), 4);
    assert_eq!(code(&lander(&["fly", "-o", s(&dir), "--model", s(&dir.join("absent.json"))])), 4);
}

#[test]
fn too_short_log_exits_1() {
    let dir = scratch("short");
    let log = short_log(&dir, "0.02");
    let out = lander(&["train", "-o", s(&dir), "--log", &log, "--epochs", "1"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn pipeline_round_trip_and_determinism() {
    let dir = scratch("pipeline");
    let log = short_log(&dir, "30");
    let again = scratch("pipeline-again");
    short_log(&again, "30");
    assert_eq!(
        std::fs::read(&log).unwrap(),
        std::fs::read(again.join("collect.csv")).unwrap()
    );

    let out = lander(&["train", "-o", s(&dir), "--log", &log, "--epochs", "3", "--name", "m"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = dir.join("m.json");
    assert!(dir.join("m.report.json").exists());

    let out = lander(&["fly", "-o", s(&dir), "--model", s(&model), "--name", "f.1", "--duration", "6"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let flown: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(flown["scenario"], "landing");

    let out = lander(&["evaluate", "--log", s(&dir.join("f.1.csv")), "--model", s(&model)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let evaluated: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(evaluated["controller"], flown["controller"]);
    assert_eq!(evaluated["terminal_z_error"], flown["terminal_z_error"]);
}
