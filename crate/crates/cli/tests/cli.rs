use std::path::PathBuf;
use std::process::{Command, Output};

fn ecsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecsim"))
        .args(args)
        .env_remove("ECSIM_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

#[test]
fn run_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg,
        "name = tiny\ndataset = synth:m=8,d=6,seed=3\nworkers = 2\nepochs = 3\nl2 = 0.1\nseeds = 0,1\nmethod = ec-sgd us ht=0.01\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = ecsim(&[
        "run",
        cfg.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
        "--parallel",
        "true",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("tiny__ec-sgd-us-ht0.01__seed1.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("# dataset_hash = ")));
    let svg = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert_eq!(svg, 1);
    assert_eq!(stdout(&out).matches("wrote ").count(), 3);
}

#[test]
fn run_reports_config_errors_with_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs = 1\nworkerz = 3\n").unwrap();
    let out = ecsim(&["run", cfg.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("workerz"), "{err}");
}

#[test]
fn missing_dataset_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("missing.cfg");
    std::fs::write(&cfg, "preset = exp2_vr\ndataset = nowhere.libsvm\nepochs = 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = ecsim(&["run", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!out_dir.exists());
}

#[test]
fn data_dir_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rel.cfg");
    std::fs::write(
        &cfg,
        "dataset = small.libsvm\nworkers = 2\nepochs = 1\nmethod = ec-sgd full id\n",
    )
    .unwrap();
    let data_dir = fixture("small.libsvm").parent().unwrap().to_path_buf();
    let out = ecsim(&[
        "--data-dir",
        data_dir.to_str().unwrap(),
        "run",
        cfg.to_str().unwrap(),
        "-o",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn calc_lsvrg_cap() {
    let out = ecsim(&[
        "calc",
        "--method",
        "ec-lsvrg",
        "--smoothness",
        "1",
        "--expected-smoothness",
        "1",
        "--workers",
        "1",
        "--p",
        "1",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let h = text
        .lines()
        .find_map(|l| l.strip_prefix("h,"))
        .expect("h row")
        .parse::<f64>()
        .unwrap();
    assert!((h - 4.0 * 17.0 / 3.0).abs() < 1e-12, "{text}");
}

#[test]
fn calc_stepsize_and_bound() {
    let out = ecsim(&[
        "calc",
        "--method",
        "ec-sgd",
        "--smoothness",
        "2.5",
        "--mu",
        "1",
        "--iterations",
        "1000",
        "--dist-sq",
        "1",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    for key in ["gamma", "T0", "bound", "c1", "c2"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{key} missing in\n{text}");
    }
}

#[test]
fn calc_needs_a_method() {
    let out = ecsim(&["calc"]);
    assert!(!out.status.success());
}

#[test]
fn parse_check_summary_and_errors() {
    let out = ecsim(&["parse-check", fixture("small.libsvm").to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("samples   8"), "{text}");
    assert!(text.contains("d         5"), "{text}");
    let out = ecsim(&["parse-check", fixture("bad_descending.libsvm").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn solve_ref_prints_optimum() {
    let out = ecsim(&["solve-ref", "synth:m=10,d=4,seed=1", "--workers", "2", "--l2", "0.1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let grad: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("grad norm"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(grad <= 1e-10);
}
