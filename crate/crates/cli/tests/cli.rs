use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eislab"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn eislab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn figure1_writes_three_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig");
    let o = run(&[
        "figure1",
        "--config",
        configs().join("figure1.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    for panel in ["psi_0.5", "psi_1", "psi_2"] {
        let text = fs::read_to_string(out.join(format!("figure1_{panel}.csv"))).unwrap();
        assert!(text.starts_with("panel,curve_id,c1,c2\n"));
        assert!(text.lines().count() > 100);
    }
    let bundles = fs::read_to_string(out.join("figure1_bundles.csv")).unwrap();
    assert_eq!(bundles.lines().count(), 10);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.lines().all(|l| !l.starts_with("FAIL")));
}

#[test]
fn statics_reports_full_sign_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("statics.toml");
    fs::write(&cfg, "[statics]\ncases = 120\ncertificate_cases = 6\n").unwrap();
    let out = dir.path().join("st");
    let o = run(&[
        "statics",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    let line = summary.lines().find(|l| l.contains("sign agreement")).unwrap();
    assert!(line.starts_with("PASS") && line.contains("(100.00%)"), "{line}");
    let csv = fs::read_to_string(out.join("statics.csv")).unwrap();
    assert!(csv.starts_with("w,alpha,psi,eps,c_alpha,c_alpha_fd,sign_pred,sign_obs,concave_flag\n"));
}

#[test]
fn malformed_config_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = fs::read_to_string(configs().join("homothetic.toml"))
        .unwrap()
        .replace("n = 64", "n = 64\nspacing = 2");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("never");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("spacing") && err.contains("line"), "{err}");
    assert!(!out.exists());

    // semantically invalid: a return vector of the wrong length
    let text = fs::read_to_string(configs().join("homothetic.toml"))
        .unwrap()
        .replace("[0.88, 1.32]", "[0.88]");
    fs::write(&cfg, text).unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("setting.portfolios[2].returns"));
    assert!(!out.exists());
}

#[test]
fn incompatible_shock_is_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("shock.toml");
    let text = fs::read_to_string(configs().join("homothetic.toml")).unwrap()
        + "\n[[shocks]]\nkind = \"fosd-income\"\ncomponent = \"transitory\"\nmagnitude = 0.1\n";
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("never");
    let o = run(&["shock", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shocks[0]"));
    assert!(!out.exists());
}

#[test]
fn identify_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("identify.toml");
    let mut panels = Vec::new();
    for (k, workers) in ["1", "3"].into_iter().enumerate() {
        let out = dir.path().join(format!("id{k}"));
        let o = bin()
            .env("EISLAB_WORKERS", workers)
            .args(["identify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9"])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stdout(&o));
        panels.push((
            fs::read(out.join("panel.csv")).unwrap(),
            fs::read(out.join("estimates.csv")).unwrap(),
        ));
    }
    assert_eq!(panels[0], panels[1]);
}

#[test]
fn failed_assertion_sets_exit_code() {
    // an identification run whose shifter barely moves returns cannot hit
    // the noiseless tolerance once noise is this large relative to it
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("id.toml");
    let text = fs::read_to_string(configs().join("identify.toml"))
        .unwrap()
        .replace("loading = 0.3", "loading = 0.001")
        .replace("noise_sd = 0.01", "noise_sd = 0.005")
        .replace("periods = 10", "periods = 3");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("id");
    let o = run(&["identify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("FAIL group")));
}

#[test]
fn bad_worker_count_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("EISLAB_WORKERS", "zero")
        .args(["figure1", "--out", dir.path().join("f").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn discretize_prints_a_distribution() {
    let o = run(&["discretize", "--sigma", "0.1", "--nodes", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("{ values = [") && text.contains("probs = ["), "{text}");
}

#[test]
fn solve_with_cache_reuses_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cfg = configs().join("income.toml");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("s{k}"));
        let o = run(&[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--cache",
            cache.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stdout(&o));
        outputs.push(fs::read(out.join("solution.csv")).unwrap());
    }
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    assert_eq!(outputs[0], outputs[1]);
}
