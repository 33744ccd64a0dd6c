use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_enhant"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn enhant(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

fn diamond() -> PathBuf {
    configs().join("topology1.json")
}

#[test]
fn plain_run_writes_outputs() {
    let out = tempfile::tempdir().unwrap();
    let o = enhant(&["--config", s(&diamond()), "--slots", "300", "--out", s(out.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        files(out.path()),
        ["energy_trace.csv", "rate_trace.csv", "run_manifest.json", "schedule.txt", "stats.json"]
    );
    let energy = std::fs::read_to_string(out.path().join("energy_trace.csv")).unwrap();
    assert!(energy.starts_with("slot,node_1,node_2\n1,"));
    assert_eq!(energy.lines().count(), 301);
    let rates = std::fs::read_to_string(out.path().join("rate_trace.csv")).unwrap();
    assert!(rates.starts_with("slot,source_1\n1,1\n"));
    let stats: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["slots"], 300);
    assert_eq!(stats["strategy"], "estimate");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("routing state statistics"));
}

#[test]
fn overrides_reach_the_manifest() {
    let out = tempfile::tempdir().unwrap();
    let o = enhant(&[
        "--config",
        s(&diamond()),
        "--slots",
        "50",
        "--seed",
        "42",
        "--strategy",
        "no-feedback",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.path().join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["simulation"]["num_slots"], 50);
    assert_eq!(m["simulation"]["seed"], 42);
    assert_eq!(m["simulation"]["strategy"], "no-feedback");
    // The manifest is itself a runnable config.
    let again = tempfile::tempdir().unwrap();
    let o = enhant(&["--config", s(&out.path().join("run_manifest.json")), "--out", s(again.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read(out.path().join("stats.json")).unwrap(),
        std::fs::read(again.path().join("stats.json")).unwrap()
    );
}

#[test]
fn debug_streams() {
    let out = tempfile::tempdir().unwrap();
    let o = enhant(&[
        "--config",
        s(&diamond()),
        "--slots",
        "3000",
        "--debug",
        "switch-times",
        "--debug",
        "strategy",
        "--debug",
        "nonswitch-shift",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let sw = std::fs::read_to_string(out.path().join("debug_switch_times.log")).unwrap();
    let first = sw.lines().next().unwrap();
    assert!(first.starts_with("slot 1: routing [1] rates [1] harvest [0.3985, 0.3985] levels"), "{first}");
    assert!(sw.lines().count() > 2);
    let st = std::fs::read_to_string(out.path().join("debug_strategy.log")).unwrap();
    assert!(st.contains("source 1:"));
    let ns = std::fs::read_to_string(out.path().join("debug_nonswitch_shift.log")).unwrap();
    assert!(ns.contains("non-switch b_max shift +1"), "{ns}");
}

#[test]
fn replay_reproduces_and_rejects_truncation() {
    let cfg = configs().join("topology2.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(enhant(&["--config", s(&cfg), "--slots", "2000", "--out", s(a.path())]).status.code(), Some(0));
    let sched = a.path().join("schedule.txt");
    let o = enhant(&["--config", s(&cfg), "--slots", "2000", "--replay", s(&sched), "--out", s(b.path())]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["stats.json", "energy_trace.csv", "rate_trace.csv", "schedule.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    let c = tempfile::tempdir().unwrap();
    let o = enhant(&[
        "--config",
        s(&cfg),
        "--slots",
        "2000",
        "--replay",
        s(&sched),
        "--strategy",
        "no-feedback",
        "--out",
        s(c.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(a.path().join("stats.json")).unwrap(), std::fs::read(c.path().join("stats.json")).unwrap());

    let text = std::fs::read_to_string(&sched).unwrap();
    let short: String = text.lines().take(1500).map(|l| format!("{l}\n")).collect();
    let truncated = a.path().join("short.txt");
    std::fs::write(&truncated, short).unwrap();
    let d = tempfile::tempdir().unwrap();
    let o = enhant(&["--config", s(&cfg), "--slots", "2000", "--replay", s(&truncated), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("1500 slots recorded"));
    assert!(!d.path().join("stats.json").exists());
}

#[test]
fn missing_threshold_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(diamond()).unwrap()).unwrap();
    v["sources"][0].as_object_mut().unwrap().remove("h1");
    let p = dir.path().join("bad.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let o = enhant(&["--config", s(&p), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sources[0].h1"));
}

#[test]
fn legacy_trace_warning() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("h.txt"), "0.3\n0.5\n").unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(diamond()).unwrap()).unwrap();
    v["nodes"][1]["harvest"] = 150.into();
    v["nodes"][1]["trace_file"] = "h.txt".into();
    let p = dir.path().join("legacy.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let o = enhant(&["--config", s(&p), "--slots", "10", "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning: node 2: harvest value 150"));
}

#[test]
fn fatal_keeps_partial_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(diamond()).unwrap()).unwrap();
    v["simulation"]["strategy"] = "no-feedback".into();
    v["nodes"][0] = serde_json::json!({"harvest": 0, "initial_battery": 0.003, "b_max": 100});
    v["nodes"][1] = serde_json::json!({"harvest": 2, "initial_battery": 4, "b_max": 100});
    let p = dir.path().join("fatal.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let out = dir.path().join("o");
    let o = enhant(&["--config", s(&p), "--slots", "100", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("slot 2") && err.contains("node 1"), "{err}");
    let energy = std::fs::read_to_string(out.join("energy_trace.csv")).unwrap();
    assert_eq!(energy.lines().count(), 2);
    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["fatal"]["slot"], 2);
}

#[test]
fn sweep_writes_table_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let base = configs().join("topology2.json");
    std::fs::write(
        &spec,
        serde_json::json!({"base": base, "axis": "initial_routing", "repetitions": 1, "num_slots": 200}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = enhant(&["--sweep", s(&spec), "--jobs", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    assert!(csv.starts_with("axis,value,repetition,seed,routing_state_statistic"));
    let text = std::fs::read_to_string(out.join("sweep.txt")).unwrap();
    assert!(text.starts_with("Initial Route\tRouting State Statistic"));
    for r in ["1_1", "1_2", "2_1", "2_2"] {
        assert!(out.join("runs").join(r).join("rep0/stats.json").exists(), "{r}");
    }
}

#[test]
fn bad_sweep_value_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        serde_json::json!({"base": diamond(), "axis": "shift_pause", "values": [1.5]}).to_string(),
    )
    .unwrap();
    let o = enhant(&["--sweep", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}
