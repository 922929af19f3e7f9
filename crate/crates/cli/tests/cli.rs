//! Runs the `cachegame` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cachegame::analysis::{
    export_traces, stealthy_streamline, textbook_prime_probe_rounds, AttackTraceSet, AttackTree, Category,
};
use cachegame::presets;
use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cachegame"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = run(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn field(text: &str, key: &str) -> String {
    let prefix = format!("{key}: ");
    text.lines().find_map(|l| l.strip_prefix(&prefix)).unwrap_or_else(|| panic!("no `{key}` in {text}")).to_string()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn write_set(dir: &Path, name: &str, set: &AttackTraceSet) -> String {
    let path = dir.join(name);
    fs::write(&path, export_traces(set)).unwrap();
    path.display().to_string()
}

#[test]
fn train_finds_config_5_attack() {
    let tmp = TempDir::new().unwrap();
    ok(&["train", "--config", "preset:config5", "--agent", "tabular", "--seed", "1"], tmp.path());
    let report = read(tmp.path(), "report.txt");
    let acc: f64 = field(&report, "final_accuracy").parse().unwrap();
    assert!(acc >= 0.95, "{report}");
    assert!(read(tmp.path(), "curve.csv").starts_with("step,reward,accuracy,episode_len\n"));
    assert!(read(tmp.path(), "checkpoint.txt").contains("tabular"));
    assert!(read(tmp.path(), "traces.txt").contains("category LRU_STATE"));
    let manifest = read(tmp.path(), "manifest.txt");
    assert_eq!(field(&manifest, "command"), "train");
    assert_eq!(field(&manifest, "seed"), "1");
    assert_eq!(field(&manifest, "config_hash").len(), 64);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["train", "--config", "preset:config1", "--seed", "4", "--max-steps", "60000"];
    ok(&args, a.path());
    ok(&args, b.path());
    for f in ["curve.csv", "checkpoint.txt", "report.txt"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn config_files_and_presets_hash_alike() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("toy.txt");
    fs::write(&cfg, cachegame::env::render_config(&presets::toy_config())).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["search", "--config", cfg.to_str().unwrap(), "--max-len", "3"], &a);
    ok(&["search", "--config", "preset:toy", "--max-len", "3"], &b);
    assert_eq!(field(&read(&a, "manifest.txt"), "config_hash"), field(&read(&b, "manifest.txt"), "config_hash"));
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.txt");
    fs::write(&cfg, "num_blocks: 4\nnum_wayz: 4\n").unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("num_wayz"));
}

#[test]
fn search_writes_toy_attacks() {
    let tmp = TempDir::new().unwrap();
    ok(&["search", "--config", "preset:toy", "--max-len", "3"], tmp.path());
    let found = read(tmp.path(), "search.txt");
    assert!(found.lines().count() >= 1);
    assert!(found.lines().all(|l| l.contains('v')));
    assert!(read(tmp.path(), "traces.txt").starts_with("cachegame-traces 1"));
}

#[test]
fn search_refuses_eight_ways() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["search", "--config", "preset:config12", "--max-len", "18"], tmp.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("search refused") && err.contains("M(8) = 2.052e7"), "{err}");
}

#[test]
fn search_of_length_zero_is_empty() {
    let tmp = TempDir::new().unwrap();
    ok(&["search", "--config", "preset:toy", "--max-len", "0"], tmp.path());
    assert_eq!(read(tmp.path(), "search.txt"), "");
    assert!(!tmp.path().join("traces.txt").exists());
}

#[test]
fn replays_reference_traces() {
    let tmp = TempDir::new().unwrap();
    let lru = presets::golden_suite().into_iter().find(|g| g.name == "LRU case study").unwrap();
    let set = AttackTraceSet::from_tree(&lru.config, lru.tree().unwrap()).unwrap();
    let path = write_set(tmp.path(), "lru.txt", &set);
    ok(&["replay", &path, "--trials", "200"], &tmp.path().join("lru"));
    assert_eq!(field(&read(&tmp.path().join("lru"), "replay.txt"), "accuracy"), "1");

    let (cfg, tree) = stealthy_streamline(8, None).unwrap();
    let path = write_set(tmp.path(), "ss.txt", &AttackTraceSet::from_tree(&cfg, tree).unwrap());
    ok(&["replay", &path], &tmp.path().join("ss"));
    let r = read(&tmp.path().join("ss"), "replay.txt");
    assert_eq!(field(&r, "accuracy"), "1");
    assert_eq!(field(&r, "victim_misses"), "0");
}

#[test]
fn corrupted_trace_reports_its_line() {
    let tmp = TempDir::new().unwrap();
    let g = &presets::golden_suite()[0];
    let text = export_traces(&AttackTraceSet::from_tree(&g.config, g.tree().unwrap()).unwrap());
    let bad = text.replacen("A 5 miss", "A five miss", 1);
    let line = bad.lines().position(|l| l == "A five miss").unwrap() + 1;
    let path = tmp.path().join("bad.txt");
    fs::write(&path, bad).unwrap();
    let o = run(&["replay", path.to_str().unwrap()], tmp.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains(&format!("trace line {line}:")));
}

#[test]
fn detects_textbook_prime_probe() {
    let tmp = TempDir::new().unwrap();
    let cfg = presets::cc_hunter_config(160);
    let set = AttackTraceSet::from_tree(&cfg, textbook_prime_probe_rounds(&cfg).unwrap()).unwrap();
    let path = write_set(tmp.path(), "pp.txt", &set);
    ok(&["detect", &path, "--detector", "cchunter"], &tmp.path().join("cc"));
    let r = read(&tmp.path().join("cc"), "detect.txt");
    assert_eq!(field(&r, "verdict"), "DETECTED");
    let c: f64 = field(&r, "max_autocorrelation").parse().unwrap();
    assert!((c - 0.96).abs() < 0.02, "{c}");

    ok(&["detect", &path, "--detector", "cyclone"], &tmp.path().join("cy"));
    assert_eq!(field(&read(&tmp.path().join("cy"), "detect.txt"), "verdict"), "DETECTED");
    assert!(tmp.path().join("cy/features.csv").exists());
}

#[test]
fn empty_trace_is_not_detected() {
    let tmp = TempDir::new().unwrap();
    let set = AttackTraceSet {
        config: presets::table3_config(1).unwrap(),
        tree: AttackTree { rounds: Vec::new() },
        verified_accuracy: 0.0,
        victim_miss_count: 0,
        category: Category::Unknown,
    };
    let path = write_set(tmp.path(), "empty.txt", &set);
    for d in ["cchunter", "vmiss"] {
        let out = tmp.path().join(d);
        ok(&["detect", &path, "--detector", d], &out);
        let r = read(&out, "detect.txt");
        assert_eq!(field(&r, "verdict"), "NOT DETECTED", "{d}");
    }
    assert_eq!(field(&read(&tmp.path().join("cchunter"), "detect.txt"), "max_autocorrelation"), "0");
}

#[test]
fn stealthy_trace_passes_miss_monitor() {
    let tmp = TempDir::new().unwrap();
    let (cfg, tree) = stealthy_streamline(4, Some(200)).unwrap();
    let path = write_set(tmp.path(), "ss.txt", &AttackTraceSet::from_tree(&cfg, tree).unwrap());
    ok(&["detect", &path, "--detector", "vmiss"], tmp.path());
    let r = read(tmp.path(), "detect.txt");
    assert_eq!(field(&r, "victim_misses"), "0");
    assert_eq!(field(&r, "verdict"), "NOT DETECTED");
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = TempDir::new().unwrap();
    let args = ["sweep", "--config", "preset:toy", "--param", "step_reward", "--values", "-1", "--max-steps", "20000"];
    ok(&args, tmp.path());
    let csv = read(tmp.path(), "sweep.csv");
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("step_reward,"));

    let args = ["sweep", "--config", "preset:toy", "--param", "reward_scale", "--values", "0.1,1", "--max-steps", "50000"];
    ok(&args, tmp.path());
    let csv = read(tmp.path(), "sweep.csv");
    let converged: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(converged, vec!["true", "true"], "{csv}");
}

#[test]
fn sweep_rejects_unknown_parameters() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["sweep", "--config", "preset:toy", "--param", "stepp_reward", "--values", "0"], tmp.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepp_reward"));
}
