use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn granola(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_granola")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_to(dir: &TempDir, config: &Path, name: &str) -> (Output, PathBuf) {
    let out = dir.path().join(name);
    let o = granola(&["run", config.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    (o, out)
}

fn without_wall_time(text: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("wall_time");
    v
}

#[test]
fn degree_config_runs_and_writes_results() {
    let dir = TempDir::new().unwrap();
    let (o, out) = run_to(&dir, &configs().join("degree_granola.toml"), "degree.json");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let at: Vec<usize> = ["config", "history", "final", "wall_time", "seed"]
        .iter()
        .map(|k| text.find(&format!("\n  \"{k}\":")).expect(k))
        .collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "field order {at:?}");

    let csv = fs::read_to_string(out.with_extension("csv")).unwrap();
    assert!(csv.starts_with("epoch,loss\n"));
    assert!(!csv.contains('\r'));
    assert_eq!(csv.lines().count(), 501);
}

#[test]
fn unknown_norm_is_a_config_error_naming_it() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("degree_batchnorm.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, text.replace("\"batchnorm\"", "\"fancynorm\"")).unwrap();
    let (o, out) = run_to(&dir, &bad, "bad.json");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fancynorm"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_field_is_named() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"task": {"kind": "degree_regression"}, "model": {"input_width": 1, "layers": []}, "epochz": 3}"#)
        .unwrap();
    let (o, _) = run_to(&dir, &bad, "bad.out.json");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));
}

#[test]
fn unsupported_extension_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("cfg.yaml");
    fs::write(&bad, "seed: 1\n").unwrap();
    assert_eq!(run_to(&dir, &bad, "x.json").0.status.code(), Some(2));
}

#[test]
fn diverging_run_exits_with_numerical_code() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(configs().join("degree_granola.toml")).unwrap();
    let cfg = dir.path().join("huge_lr.toml");
    fs::write(&cfg, text.replace("lr = 0.01", "lr = 1e300")).unwrap();
    let (o, _) = run_to(&dir, &cfg, "huge.json");
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn same_config_gives_identical_results() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("pair_granola.json");
    let (a, pa) = run_to(&dir, &cfg, "a.json");
    let (b, pb) = run_to(&dir, &cfg, "b.json");
    assert!(a.status.success() && b.status.success());
    let (ta, tb) = (fs::read_to_string(pa.clone()).unwrap(), fs::read_to_string(pb.clone()).unwrap());
    assert_eq!(without_wall_time(&ta), without_wall_time(&tb));
    let strip = |t: &str| t.lines().filter(|l| !l.contains("\"wall_time\"")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&ta), strip(&tb));
    assert_eq!(fs::read(pa.with_extension("csv")).unwrap(), fs::read(pb.with_extension("csv")).unwrap());
}

#[test]
fn gen_csl_has_sixteen_edges() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("csl.json");
    let o = granola(&["gen", "csl", "8", "2", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let g = granola_core::graph::io::from_json_str(&text).unwrap();
    assert_eq!(g.num_edges(), 16);
    assert!(g.degrees().iter().all(|&d| d == 4));
}

#[test]
fn gen_is_deterministic_and_rejects_bad_params() {
    let a = granola(&["gen", "er", "20", "0.3", "--seed", "5"]);
    let b = granola(&["gen", "er", "20", "0.3", "--seed", "5"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(granola(&["gen", "csl", "8", "9"]).status.code(), Some(2));
    assert_eq!(granola(&["gen", "er", "5", "1.5"]).status.code(), Some(2));
}

#[test]
fn bench_writes_one_row_per_size() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench.csv");
    let o = granola(&["bench", "1000", "2000", "4000", "--reps", "3", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "nodes,edges,gin_ms,gin_granola_ms,gin_ratio,gin_granola_ratio,overhead");
    assert!(lines[1].starts_with("1000,"));
    assert!(lines[3].starts_with("4000,"));
}

#[test]
fn bench_rejects_tiny_graphs() {
    assert_eq!(granola(&["bench", "1", "--reps", "1"]).status.code(), Some(2));
}

#[test]
fn norms_suite_passes_and_skips_training() {
    let o = granola(&["props", "--suite", "norms"]);
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{table}");
    assert!(table.contains("norm-fidelity"));
    assert!(!table.contains("degree"));
    assert!(!table.contains("convergence"));
}

#[test]
fn zero_eps_surfaces_a_degenerate_reduction() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("props.toml");
    fs::write(&cfg, "eps = 0.0\n").unwrap();
    let o = granola(&["props", "--suite", "norms", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("FAIL  norm-fidelity"), "{table}");
    assert!(table.contains("degenerate reduction"), "{table}");
    assert!(stderr(&o).contains("norm-fidelity"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    assert_eq!(granola(&["props", "--suite", "everything"]).status.code(), Some(2));
}

#[test]
fn gradcheck_on_granola_config_is_within_tolerance() {
    let o = granola(&["gradcheck", configs().join("pair_granola.json").to_str().unwrap()]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    let worst: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("worst relative error "))
        .and_then(|rest| rest.split(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(worst < 1e-4, "{worst}");
    assert!(text.contains("granola"));
}
