use std::path::Path;
use std::process::{Command, Output};

fn trajstream(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajstream"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TRAJSTREAM_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn metrics(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "generate",
        "--ticks",
        "25",
        "--initial-users",
        "50",
        "--seed",
        "4",
    ];
    let a = trajstream(&args, dir.path());
    let b = trajstream(&args, dir.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(a.stdout.starts_with(b"user_id,timestamp,x,y\n"));
}

#[test]
fn run_writes_artifacts_and_evaluate_matches() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = trajstream(
        &[
            "generate",
            "--ticks",
            "30",
            "--initial-users",
            "200",
            "--seed",
            "1",
            "-o",
            "in.csv",
        ],
        d,
    );
    assert!(gen.status.success());
    let run = Command::new(env!("CARGO_BIN_EXE_trajstream"))
        .args([
            "run",
            "--input",
            "in.csv",
            "--epsilon",
            "2",
            "--w",
            "10",
            "--seed",
            "3",
        ])
        .env("TRAJSTREAM_OUTPUT_DIR", "out")
        .current_dir(d)
        .output()
        .unwrap();
    let report = metrics(&run);
    assert_eq!(report["metadata"]["epsilon"], 2.0);
    assert_eq!(report["metadata"]["w"], 10);
    for f in [
        "metrics.json",
        "allocation.jsonl",
        "per_tick.csv",
        "timings.csv",
        "synthetic.csv",
    ] {
        assert!(d.join("out").join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(d.join("out/allocation.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 30);

    let eval = metrics(&trajstream(
        &[
            "evaluate",
            "--original",
            "in.csv",
            "--synthetic",
            "out/synthetic.csv",
        ],
        d,
    ));
    assert_eq!(eval["density_error"], report["density_error"]);
    assert_eq!(eval["kendall_tau"], report["kendall_tau"]);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"input": {"generator": {"ticks": 25, "initial_users": 100}}, "variant": "no_eq", "epsilon": 0.5}"#,
    )
    .unwrap();
    let report = metrics(&trajstream(
        &["run", "--config", "cfg.json", "--epsilon", "4"],
        d,
    ));
    assert_eq!(report["metadata"]["variant"], "no_eq");
    assert_eq!(report["metadata"]["epsilon"], 4.0);
    assert!(!d.join("out").exists());
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("bad.csv"),
        "user_id,timestamp,x,y\nu1,0,0.5,0.5\nu1,zero,0.5,0.5\n",
    )
    .unwrap();
    let out = trajstream(&["run", "--input", "bad.csv"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:3:"));

    let out = trajstream(&["run", "--variant", "everything"], d);
    assert!(!out.status.success());
}
