use std::fs;
use std::path::Path;
use std::process::Command;

fn rewire(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rewire")).args(args).output().expect("binary runs")
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn topomap_zero_duration_writes_initial_state_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t0");
    let o = rewire(&["topomap", "--duration-ms", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["eliminations.csv", "formations.csv", "degrees.csv", "profile.csv", "distances.csv", "timing.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(lines(&out.join("eliminations.csv")), 1);
    assert_eq!(lines(&out.join("formations.csv")), 1);
    let degrees = fs::read_to_string(out.join("degrees.csv")).unwrap();
    assert!(degrees.lines().skip(1).all(|l| l.starts_with("0,")));
    let timing = fs::read_to_string(out.join("timing.csv")).unwrap();
    assert!(timing.contains("remap,") && timing.contains("total,"));
}

#[test]
fn topomap_same_seed_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rewire(&["topomap", "--duration-ms", "300", "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["eliminations.csv", "formations.csv", "degrees.csv", "profile.csv", "distances.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn classifier_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "[classifier]\nnum_hidden = 16\nbatch_size = 4\nnum_batches = 3\ntest_examples = 4\nexample_steps = 50\n",
    )
    .unwrap();
    let out = dir.path().join("c");
    let o = rewire(&[
        "classifier",
        "--config",
        cfg.to_str().unwrap(),
        "--deep-r",
        "on",
        "--density",
        "0.3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let training = fs::read_to_string(out.join("training.csv")).unwrap();
    assert!(training.starts_with("batch,loss,accuracy,rewired,total,rewiring_fraction\n"));
    assert_eq!(training.lines().count(), 4);
    assert!(out.join("deep_r_in_hid.csv").exists() && out.join("deep_r_hid_hid.csv").exists());
    let written = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("deep_r = true"));
}

#[test]
fn bench_reports_every_phase() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = rewire(&["bench", "--scale", "1,2", "--duration-ms", "50", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 7);
    assert!(text.lines().any(|l| l.starts_with("2,remap,")));
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = \"many\"\n").unwrap();
    let o = rewire(&["topomap", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = rewire(&["topomap", "--scale", "0", "--duration-ms", "0"]);
    assert!(!o.status.success());
    let o = rewire(&["topomap", "--config", "/nonexistent/x.toml"]);
    assert!(!o.status.success());
}
