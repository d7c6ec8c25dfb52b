use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "schemes = [\"NOC\", \"CEN\", \"OTA-C\"]\nn_agents = 4\niterations = 40\nruns = 2\nlog_stride = 10\n\
                    [model]\nkernels = 1\nfeatures = 3\nwidths = [500.0]\n[dataset]\ngrid_per_axis = 3\n";

fn otac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otac")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn run_config(dir: &Path, text: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.join("out");
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    otac(&args)
}

#[test]
fn run_writes_csvs_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(dir.path(), TINY, &["--seed", "11"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let nmse = std::fs::read_to_string(out.join("nmse.csv")).unwrap();
    let mut lines = nmse.lines();
    assert_eq!(lines.next(), Some("Iter,NOC,CEN,OTA-C"));
    assert_eq!(lines.count(), 5);
    assert!(!nmse.contains('\r'));
    let metrics = std::fs::read_to_string(out.join("metrics_ota-c.csv")).unwrap();
    assert!(metrics.starts_with("iteration,nmse_db,"));
    let echo = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(echo.contains("seed = 11"), "{echo}");
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = otac(&[
        "run",
        "--config",
        dir.path().join("absent.toml").to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_field_reports_name_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(dir.path(), "n_agents = \"many\"\n", &[]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("n_agents") && err.contains("line 1"), "{err}");
}

#[test]
fn fig2_preset_has_six_scheme_columns() {
    let dir = tempfile::tempdir().unwrap();
    let text = "preset = \"fig2\"\nn_agents = 4\niterations = 10\nruns = 1\nlog_stride = 5\n\
                [model]\nfeatures = 3\n[dataset]\ngrid_per_axis = 3\n";
    let o = run_config(dir.path(), text, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let nmse = std::fs::read_to_string(dir.path().join("out/nmse.csv")).unwrap();
    assert_eq!(nmse.lines().next(), Some("Iter,OTA-CS,OTA-C,DBC,ANB,NOC,CEN"));
}

#[test]
fn sweep_writes_axis_table() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{TINY}[sweep]\naxis = \"snr\"\nvalues = [-10.0, 0.0]\n");
    let o = run_config(dir.path(), &text, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("out/sweep_snr.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "SNR,NOC,CEN,OTA-C");
    assert_eq!(lines.len(), 3);
}

#[test]
fn verify_suites_and_exit_codes() {
    let o = otac(&["verify", "equivalence"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("max_abs_diff"));
    let o = otac(&["verify", "lemma1", "--samples", "2000"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = otac(&["verify", "definition3", "--samples", "2000", "--disconnected"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("epsilon"));
    assert_eq!(code(&otac(&["verify", "no-such-suite"])), 2);
}

#[test]
fn gen_dataset_is_deterministic_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = otac(&["gen-dataset", "--seed", "5", "--rows", "10", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "x,y,z,value");
    for l in &lines[1..] {
        let v: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v), "{v}");
    }
    let o = otac(&["gen-dataset", "--seed", "5", "--rows", "0", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = otac(&["gen-dataset", "--seed", "5", "--rows", "3", "--out", "/nonexistent/dir/x.csv"]);
    assert_eq!(code(&o), 1);
}
