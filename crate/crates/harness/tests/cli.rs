//! Drives the `prl` binary end to end in a temporary directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prl_harness::sweep::{read_metrics, ResultTable, METRICS_HEADER};

fn prl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prl"))
        .args(args)
        .output()
        .expect("spawn prl")
}

fn ok(args: &[&str]) -> String {
    let out = prl(args);
    assert!(
        out.status.success(),
        "prl {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn find(dir: &Path, name: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            found.extend(find(&p, name));
        } else if p.file_name().is_some_and(|f| f == name) {
            found.push(p);
        }
    }
    found.sort();
    found
}

#[test]
fn schedule_dump_writes_the_cubic_ramp() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "schedule-dump",
        "--sparsity",
        "0.95",
        "--total",
        "10000",
        "--out",
        s(dir.path()),
    ]);
    let csv = fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
    let rows: Vec<(u64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (t, v) = l.split_once(',').unwrap();
            (t.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.first().unwrap().0, 0);
    assert_eq!(rows.last().unwrap().0, 10_000);
    let at = |t: u64| rows.iter().find(|r| r.0 == t).unwrap().1;
    assert_eq!(at(1000), 0.0);
    assert!((at(5000) - 0.83125).abs() < 1e-12);
    assert!((at(9000) - 0.95).abs() < 1e-12);
    assert!(rows.windows(2).all(|w| w[0].1 <= w[1].1));
    let svg = fs::read_to_string(dir.path().join("schedule.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn train_record_offline_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let online = write_config(
        d,
        "online.cfg",
        "env = catch\nagent = dqn\nsparsity = 0.5\ntotal_steps = 1500\nmin_replay = 200\nlog_interval = 500\neval_episodes = 3\n",
    );
    let run = d.join("online");
    let stdout = ok(&[
        "train",
        "--config",
        s(&online),
        "--seed",
        "2",
        "--out",
        s(&run),
    ]);
    assert!(stdout.contains("final return"));
    let metrics = read_metrics(&run.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.iter().map(|r| r.step).collect::<Vec<_>>(),
        [500, 1000, 1500]
    );
    let header = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(header.lines().next(), Some(METRICS_HEADER));
    let ckpt = run.join("checkpoint.prlc");
    assert!(ckpt.is_file());

    let data = d.join("catch.prld");
    let stdout = ok(&[
        "record-dataset",
        "--checkpoint",
        s(&ckpt),
        "--env",
        "catch",
        "--steps",
        "4000",
        "--rate",
        "0.25",
        "--out",
        s(&data),
    ]);
    assert!(stdout.contains("transitions"));
    assert_eq!(&fs::read(&data).unwrap()[..4], b"PRLD");

    let offline = write_config(
        d,
        "offline.cfg",
        "env = catch\nagent = cql\ntotal_steps = 300\nlog_interval = 100\neval_episodes = 2\n",
    );
    let off = d.join("offline");
    ok(&[
        "train-offline",
        "--config",
        s(&offline),
        "--dataset",
        s(&data),
        "--out",
        s(&off),
    ]);
    assert_eq!(read_metrics(&off.join("metrics.csv")).unwrap().len(), 3);

    // a dataset from another environment is refused
    let wrong = write_config(
        d,
        "wrong.cfg",
        "env = cartpole\nagent = cql\ntotal_steps = 10\n",
    );
    let out = prl(&[
        "train-offline",
        "--config",
        s(&wrong),
        "--dataset",
        s(&data),
        "--out",
        s(&off),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("catch"));

    let stdout = ok(&[
        "analyze",
        "--config",
        s(&online),
        "--checkpoint",
        s(&ckpt),
        "--items",
        "12",
        "--out",
        s(d),
    ]);
    assert!(stdout.contains("srank"));
    let cov = fs::read_to_string(d.join("covariance/checkpoint.csv")).unwrap();
    assert_eq!(cov.lines().count(), 12);
    assert!(cov.lines().all(|l| l.split(',').count() == 12));

    let stdout = ok(&["report", "--out", s(d)]);
    assert!(stdout.contains("summary.txt"));
    assert!(d.join("covariance/checkpoint.svg").is_file());
}

#[test]
fn sweep_is_deterministic_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let body = "env = cartpole\nsparsity = 0, 0.9\nseeds = 0, 1\ntotal_steps = 800\nmin_replay = 200\nlog_interval = 400\neval_episodes = 2\ndiagnostics = false\n";
    let cfg = write_config(d, "sweep.cfg", body);
    let (a, b) = (d.join("a"), d.join("b"));
    ok(&[
        "sweep",
        "--config",
        s(&cfg),
        "--workers",
        "2",
        "--out",
        s(&a),
    ]);
    ok(&[
        "sweep",
        "--config",
        s(&cfg),
        "--workers",
        "1",
        "--out",
        s(&b),
    ]);
    let ta = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(ta, fs::read_to_string(b.join("results.csv")).unwrap());
    let table = ResultTable::parse(&ta).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.is_ok()));
    let metrics_a = find(&a, "metrics.csv");
    assert_eq!(metrics_a.len(), 4);
    for (pa, pb) in metrics_a.iter().zip(find(&b, "metrics.csv")) {
        assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
    }

    ok(&["report", "--out", s(&a)]);
    for name in [
        "summary.txt",
        "iqm.svg",
        "learning_curves.svg",
        "sparsity.svg",
        "diagnostics.svg",
    ] {
        assert!(a.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn calibrate_writes_a_registry() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("registry.txt");
    ok(&["calibrate", "--episodes", "200", "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    for env in ["cartpole", "catch", "gridworld"] {
        assert!(text.lines().any(|l| l.starts_with(env)), "{env} missing");
    }
}

#[test]
fn bad_input_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.cfg", "env = catch\nsparsty = 0.5\n");
    let out = prl(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sparsty"));

    let grid = write_config(dir.path(), "grid.cfg", "env = catch\nwidth = 1, 2\n");
    let out = prl(&["train", "--config", s(&grid)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep"));
}
