use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_contentflow");

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).arg("--out").arg(out).output().unwrap()
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn default_sweep_has_fifteen_groups_of_twenty() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig.csv");
    let o = run(&["sweep"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let header = csv::Reader::from_path(&out).unwrap().headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["alpha", "rho", "seed", "avg_backlog_p1_kb", "avg_backlog_p2_kb", "gain_pct"]
    );
    let rows = records(&out);
    assert_eq!(rows.len(), 300);
    let mut per_alpha: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rows {
        *per_alpha.entry(r[0].to_owned()).or_default() += 1;
    }
    assert_eq!(per_alpha.len(), 15);
    assert!(per_alpha.values().all(|&n| n == 20));
}

#[test]
fn summary_agrees_with_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = run(&["sweep", "--alpha-min", "1.3", "--alpha-max", "1.6", "--seeds", "4", "--horizon", "2000"], &out);
    assert!(o.status.success());
    let mut gains: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records(&out) {
        let (p1, p2): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        let gain: f64 = r[5].parse().unwrap();
        assert!((gain - 100.0 * (p1 - p2) / p1).abs() < 1e-9);
        gains.entry(r[0].to_owned()).or_default().push(gain);
    }
    let summary = records(&dir.path().join("s_summary.csv"));
    assert_eq!(summary.len(), gains.len());
    for s in summary {
        let g = &gains[&s[0]];
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        assert_eq!(s[2].parse::<usize>().unwrap(), g.len());
        assert!((s[3].parse::<f64>().unwrap() - mean).abs() < 1e-9);
        assert_eq!(s[4].parse::<f64>().unwrap(), g.iter().copied().fold(f64::MIN, f64::max));
        assert_eq!(s[5].parse::<f64>().unwrap(), g.iter().copied().fold(f64::MAX, f64::min));
    }
}

#[test]
fn single_seed_sweep_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep", "--alpha-min", "1.8", "--alpha-max", "1.8", "--seeds", "1", "--seed-base", "42"];
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(run(&args, &a).status.success());
    assert!(run(&args, &b).status.success());
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let rows = records(&a);
    assert_eq!(rows.len(), 1);
    assert!(rows[0][5].parse::<f64>().unwrap() >= 0.0);
}

#[test]
fn scenario_fixture_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    let topo = fixture("scenario.json");
    let cfg = fixture("config.json");
    let o = run(&["scenario", "--topology", topo.to_str().unwrap(), "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["origin_bytes_second_request"], 0);
    let transcript: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let steps: std::collections::BTreeSet<u64> =
        transcript.as_array().unwrap().iter().map(|e| e["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, (1..=11).collect());
}

fn topology_without(kind: &str) -> String {
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fixture("scenario.json")).unwrap()).unwrap();
    let gone: Vec<String> = doc["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|n| n["kind"] == kind)
        .map(|n| n["id"].as_str().unwrap().to_owned())
        .collect();
    doc["nodes"].as_array_mut().unwrap().retain(|n| n["kind"] != kind);
    doc["links"]
        .as_array_mut()
        .unwrap()
        .retain(|l| !gone.iter().any(|g| l["src"] == g.as_str() || l["dst"] == g.as_str()));
    doc.to_string()
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    for kind in ["cache", "proxy"] {
        let topo = dir.path().join(format!("no_{kind}.json"));
        std::fs::write(&topo, topology_without(kind)).unwrap();
        let o = run(&["scenario", "--topology", topo.to_str().unwrap()], &out);
        assert_eq!(o.status.code(), Some(2), "{kind}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(kind));
    }
    let bad_cfg = dir.path().join("cfg.json");
    std::fs::write(&bad_cfg, r#"{"max_paths": 0}"#).unwrap();
    let topo = fixture("scenario.json");
    let o = run(&["scenario", "--topology", topo.to_str().unwrap(), "--config", bad_cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["scenario", "--topology", "/nonexistent.json"], &out).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--alpha-min", "1.0"], &out).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--rho", "1.5"], &out).status.code(), Some(2));
    assert_eq!(run(&["sweep"], Path::new("/nonexistent/dir/out.csv")).status.code(), Some(2));
    assert_eq!(Command::new(BIN).arg("sweep").output().unwrap().status.code(), Some(2));
}
