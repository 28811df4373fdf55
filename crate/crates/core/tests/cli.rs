use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutin-bench"))
        .args(args)
        .env_remove("CUTIN_BENCH_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_grid_config(dir: &Path) -> String {
    let p = dir.join("grid.json");
    fs::write(
        &p,
        r#"{"grid": {"ego_speeds": [70, 90], "cutin_speeds": [10, 30], "lateral_speeds": [0.5, 1.0, 1.7], "initial_distances": [20, 40, 60]}}"#,
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_one_trace_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"scenario": {"dx0": 60.0, "ve0": 19.444444444444443, "vo0": 2.7777777777777777, "vy": -1.0}}"#).unwrap();
    let out = dir.path().join("out");
    let o = bench(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--models", "cc,dbn", "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let traces: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(traces.len(), 2, "{traces:?}");
    for t in &traces {
        assert!(stdout(&o).contains(t.as_str()), "{t} not announced");
    }
}

#[test]
fn malformed_and_missing_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let o = bench(&["--config", bad.to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(2));

    let o = bench(&["--config", "/definitely/missing.json", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/missing.json"));

    let o = bench(&["--models", "cc,warp", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cc, rss, reg157, dbn"));

    let o = bench(&["--grid-preset", "nope", "sweep"]);
    assert_eq!(o.status.code(), Some(2));

    let o = bench(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_finite_state_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"scenario": {"ve0": 1.7e308}}"#).unwrap();
    let o = bench(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--models", "cc", "run"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn sweep_outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_grid_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = bench(&["--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads, "sweep"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    // summary, per-speed, results, and a csv/ppm pair per model and speed pair
    assert_eq!(names.len(), 3 + 2 * 4 * 4);
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n:?} differs");
    }
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert!(summary.starts_with("# cutin-bench"));
    assert!(summary.contains("# grid_hash="));
    let rows: Vec<_> = summary.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 4, "one high-band row per model: {rows:?}");
}

#[test]
fn sweep_respects_model_selection_and_env_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_grid_config(dir.path());
    let out = dir.path().join("o");
    let o = Command::new(env!("CARGO_BIN_EXE_cutin-bench"))
        .args(["--config", &cfg, "--out", out.to_str().unwrap(), "--models", "dbn", "sweep", "--no-heatmaps"])
        .env("CUTIN_BENCH_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<_> = summary.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("dbn,high,"));
}

#[test]
fn compare_needs_two_models() {
    let o = bench(&["--models", "dbn", "compare"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn comparing_a_model_with_itself_is_trivial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_grid_config(dir.path());
    let o = bench(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "--models", "dbn,dbn", "compare"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = stdout(&o).lines().find(|l| l.starts_with("| dbn |")).unwrap().to_string();
    let cells: Vec<&str> = row.split('|').map(str::trim).collect();
    assert_eq!(cells[4], "true");
    assert_eq!(cells[5], "0");
    assert_eq!(cells[7], "0.00");
    assert_eq!(cells[10], "0.00");
}

#[test]
fn compare_on_fig6_reports_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let o = bench(&["--grid-preset", "fig6", "--out", dir.path().to_str().unwrap(), "--models", "dbn,cc", "compare"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = stdout(&o).lines().find(|l| l.starts_with("| cc |")).unwrap().to_string();
    assert_eq!(row.split('|').map(str::trim).nth(4), Some("true"));
    assert!(dir.path().join("compare.md").exists());
}

#[test]
fn calibrate_reads_samples_and_writes_spec_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("v_lat,dy0_lat,label\n");
    for i in 0..25 {
        for j in 0..10 {
            let (v, d) = (-1.9 + 0.1 * i as f64, -2.0 + 0.4 * j as f64);
            let p = cutin_core::dbn::le_probability(v, d, &Default::default());
            csv.push_str(&format!("{v},{d},{p}\n"));
        }
    }
    let samples = dir.path().join("s.csv");
    fs::write(&samples, csv).unwrap();
    let o = bench(&["--out", dir.path().to_str().unwrap(), "calibrate", "--samples", samples.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json = fs::read_to_string(dir.path().join("sigmoid.json")).unwrap();
    let spec: cutin_core::dbn::NetworkSpec = serde_json::from_str(&json).unwrap();
    assert!((spec.sigmoid.m_o - 7.313).abs() < 1e-2, "{json}");

    fs::write(&samples, "v_lat,dy0_lat,label\n0,0,0.5\n").unwrap();
    let o = bench(&["--out", dir.path().to_str().unwrap(), "calibrate", "--samples", samples.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_writes_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let o = bench(&["--out", dir.path().to_str().unwrap(), "report"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["profile_fig5.csv", "profile_fig7.csv", "report.md"] {
        assert!(dir.path().join(f).exists(), "{f}");
        assert!(stdout(&o).contains(f));
    }
}

#[test]
fn help_lists_every_flag() {
    let o = bench(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let h = stdout(&o);
    for flag in ["--config", "--out", "--models", "--threads", "--grid-preset", "CUTIN_BENCH_THREADS"] {
        assert!(h.contains(flag), "{flag} missing from help");
    }
    for cmd in ["run", "sweep", "compare", "calibrate", "report"] {
        assert!(h.contains(cmd));
    }
}
