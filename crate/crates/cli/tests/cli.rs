//! End-to-end command tests against the built binary.

use std::fs;
use std::process::Command;

fn rds() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rds"))
}

#[test]
fn presets_lists_the_catalog() {
    let out = rds().arg("presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "scalar-ou",
        "remark5",
        "dissipative-cubic",
        "gbm-strat",
        "trivial-zero",
    ] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn describe_prints_constants_and_closed_form() {
    let out = rds().args(["describe", "remark5"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("lambda = 0.5"));
    assert!(text.contains("sqrt(2 + (8/23) sin^2(sqrt(23) t / 2))"));

    let out = rds()
        .args(["describe", "dissipative-cubic"])
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("exp(-L t)"), "{text}");

    let out = rds()
        .args(["describe", "definitely-not-a-preset"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.contains("scalar-ou"),
        "error must list the catalog: {err}"
    );
}

#[test]
fn dump_path_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("path.bin");
    let out = rds()
        .args([
            "dump-path",
            "--seed",
            "7",
            "--step",
            "0.01",
            "--past",
            "10",
            "--future",
            "0",
            "--dim",
            "1",
            "--out",
        ])
        .arg(&file)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("1001 points"));

    let out = rds()
        .arg("dump-path")
        .arg("--load")
        .arg(&file)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("seed 7") && text.contains("points 1001"),
        "{text}"
    );
}

#[test]
fn run_fails_cleanly_on_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "seeds = [1]\nchecks = []\n[system]\npreset = \"scalar-ou\"\n",
    )
    .unwrap();
    let out = rds().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("at least one check"), "{err}");
}

#[test]
fn run_exits_nonzero_when_a_check_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("unstable.toml");
    fs::write(
        &cfg,
        r#"
seeds = [1]
checks = ["h2"]
[system]
preset = "unstable-ou"
[path]
step = 0.01
past_horizon = 30.0
future_horizon = 0.0
[schedule]
depth = 30.0
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = rds()
        .arg("run")
        .args(["--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL"), "{text}");
    assert!(out_dir.join("h2-seed1.json").exists());
}

#[test]
fn run_passes_the_stable_default_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ok.toml");
    fs::write(
        &cfg,
        r#"
seeds = [1, 2, 3]
checks = ["equilibrium", "uniqueness", "invariance"]
[system]
preset = "scalar-ou"
[path]
step = 0.01
past_horizon = 20.0
future_horizon = 2.0
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = rds()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["all_passed"], serde_json::Value::Bool(true));
    assert_eq!(summary["checks"].as_array().unwrap().len(), 3);
}

#[test]
fn selfconv_subcommand_reports_an_order() {
    let out = rds()
        .args([
            "selfconv",
            "--preset",
            "scalar-ou",
            "--levels",
            "4",
            "--samples",
            "32",
            "--step",
            "0.02",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("fitted order"), "{text}");
}

#[test]
fn set_overrides_reach_the_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ok.toml");
    fs::write(
        &cfg,
        "seeds = [1]\nchecks = [\"equilibrium\"]\n[system]\npreset = \"scalar-ou\"\n",
    )
    .unwrap();
    // shrink the horizon below the default depth: pre-flight must reject
    let out = rds()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .args(["--set", "path.past_horizon=5.0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("past_horizon"), "{err}");
}

#[test]
fn lyapunov_check_passes_on_the_planar_spiral_preset() {
    // the deterministic linear cocycle of remark5 decays at rate 1/2
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spiral.toml");
    fs::write(
        &cfg,
        r#"
seeds = [1]
checks = ["lyapunov"]
[system]
preset = "remark5"
[path]
step = 0.001
past_horizon = 0.002
future_horizon = 100.0
[lyapunov]
horizon = 100.0
samples = 1
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = rds()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("lyapunov-seed1.json")).unwrap())
            .unwrap();
    let estimate = report["details"]["estimate"].as_f64().unwrap();
    assert!((estimate + 0.5).abs() < 0.05, "estimate {estimate}");
}

#[test]
fn inapplicable_checks_surface_as_errors_not_crashes() {
    // the dissipative classes have no linear cocycle, so the lyapunov
    // check cannot run; the campaign must finish and report the reason
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad-check.toml");
    fs::write(
        &cfg,
        r#"
seeds = [1]
checks = ["lyapunov"]
[system]
preset = "dissipative-cubic"
[path]
step = 0.01
past_horizon = 1.0
future_horizon = 5.0
[lyapunov]
horizon = 5.0
samples = 1
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = rds()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("lyapunov-seed1.json")).unwrap())
            .unwrap();
    assert_eq!(report["verdict"], "error");
    assert!(report["summary"].as_str().unwrap().contains("not defined"));
}
