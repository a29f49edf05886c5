use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use r2o_core::audit::AuditLog;
use r2o_core::sim::power::{self, Group};
use r2o_core::sim::CaseScenario;

fn r2o(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2o"))
        .args(args)
        .env_remove("R2O_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/governance.yaml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Read every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn overrides_cell(table: &str) -> usize {
    let line = table.lines().last().unwrap();
    let cells: Vec<&str> = line.split_whitespace().collect();
    cells[cells.len() - 2].parse().unwrap()
}

#[test]
fn run_case_power_prints_both_rows_and_writes_log() {
    let out = tempfile::tempdir().unwrap();
    let o = r2o(&["run-case", "power", "--config", "default", "--out", s(out.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("Load shedding (MWh)"));
    assert!(text.lines().any(|l| l.starts_with("Baseline")));
    assert!(text.lines().any(|l| l.starts_with("R2O")));

    let table = fs::read_to_string(out.path().join("tables/power-actuated.txt")).unwrap();
    assert_eq!(table, text);
    let log = fs::read_to_string(out.path().join("audit/power-actuated.jsonl")).unwrap();
    let log = AuditLog::from_jsonl(&log).unwrap();
    assert_eq!(log.records().len(), overrides_cell(&table));
    assert!(log.records().iter().all(|r| r.is_closed()));
}

#[test]
fn same_request_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = r2o(&["report", "power", "--seed", "3", "--out", s(dir.path())]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.len() >= 4);
    assert_eq!(sa, sb);
}

#[test]
fn shadow_traffic_never_actuates() {
    let out = tempfile::tempdir().unwrap();
    let o = r2o(&["run-case", "traffic", "--mode", "shadow", "--out", s(out.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let last = text.lines().last().unwrap();
    assert!(last.contains("shadow"), "{last}");
    assert!(last.trim_end().ends_with(" 0"), "{last}");
    // Shadow still records what would have happened.
    let log = fs::read_to_string(out.path().join("audit/traffic-shadow.jsonl")).unwrap();
    assert!(!AuditLog::from_jsonl(&log).unwrap().records().is_empty());
}

#[test]
fn shadow_subcommand_matches_mode_flag() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let x = r2o(&["shadow", "building", "--out", s(a.path())]);
    let y = r2o(&["run-case", "building", "--mode", "shadow", "--out", s(b.path())]);
    assert_eq!(code(&x), 0);
    assert_eq!(x.stdout, y.stdout);
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn delimited_output() {
    let out = tempfile::tempdir().unwrap();
    let o = r2o(&["run-case", "building", "--format", "delimited", "--out", s(out.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("Metric,Baseline,R2O override\n"), "{text}");
    assert!(out.path().join("tables/building-actuated.csv").is_file());
}

#[test]
fn report_writes_incident_notice_and_worksheet() {
    let out = tempfile::tempdir().unwrap();
    let o = r2o(&["report", "power", "--out", s(out.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let incidents: Vec<_> = fs::read_dir(out.path().join("reports/incidents")).unwrap().collect();
    let notices: Vec<_> = fs::read_dir(out.path().join("notices")).unwrap().collect();
    assert_eq!(incidents.len(), 1);
    assert_eq!(notices.len(), 1);
    let ws = fs::read_to_string(out.path().join("reports/worksheet-power.json")).unwrap();
    assert!(ws.contains("service_quality_default"));
}

#[test]
fn sweep_rows_follow_value_order() {
    let out = tempfile::tempdir().unwrap();
    let o = r2o(&[
        "sweep",
        "power",
        "--param",
        "tau_D",
        "--values",
        "2.0,1.2,1.0",
        "--format",
        "delimited",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let firsts: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(firsts, ["2", "1.2", "1"]);
    assert!(out.path().join("tables/sweep-power-tau_D.csv").is_file());

    let bad = r2o(&[
        "sweep",
        "power",
        "--param",
        "tau_D",
        "--values",
        "0.5",
        "--out",
        s(out.path()),
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn validate_config_accepts_canonical_document() {
    let o = r2o(&["validate-config", "--config", s(&fixture_config())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = r2o(&["validate-config"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn validate_config_rejects_bad_documents() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.yaml");
    fs::write(&broken, "thresholds: [\n").unwrap();
    let o = r2o(&["validate-config", "--config", s(&broken)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));

    let extra = dir.path().join("extra.yaml");
    let text = fs::read_to_string(fixture_config()).unwrap();
    fs::write(&extra, format!("{text}\nsurprise: 1\n")).unwrap();
    let strict = r2o(&["validate-config", "--config", s(&extra)]);
    assert_eq!(code(&strict), 1);
    assert!(stderr(&strict).contains("surprise"));
    let lenient = r2o(&["validate-config", "--config", s(&extra), "--lenient"]);
    assert_eq!(code(&lenient), 0);
    assert!(stderr(&lenient).contains("surprise"));
}

#[test]
fn config_path_from_environment() {
    let missing = Command::new(env!("CARGO_BIN_EXE_r2o"))
        .args(["validate-config"])
        .env("R2O_CONFIG", "/definitely/not/here.yaml")
        .output()
        .unwrap();
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("/definitely/not/here.yaml"));
    // An explicit flag wins over the environment.
    let flag = Command::new(env!("CARGO_BIN_EXE_r2o"))
        .args(["validate-config", "--config", "default"])
        .env("R2O_CONFIG", "/definitely/not/here.yaml")
        .output()
        .unwrap();
    assert_eq!(code(&flag), 0);
}

#[test]
fn gate_names_missing_items() {
    let ws = tempfile::tempdir().unwrap();
    let o = r2o(&["gate", s(ws.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("model_card"));
    assert!(stderr(&o).contains("civic_tabletop"));

    fs::create_dir_all(ws.path().join("docs")).unwrap();
    fs::create_dir_all(ws.path().join("reviews")).unwrap();
    fs::write(ws.path().join("docs/model_card.md"), "card").unwrap();
    fs::write(ws.path().join("docs/datasheet.pdf"), "sheet").unwrap();
    for stage in ["scenario_walkthrough", "shadow_mode", "civic_tabletop"] {
        fs::write(ws.path().join(format!("reviews/{stage}.done")), "").unwrap();
    }
    let o = r2o(&["gate", s(ws.path())]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));

    let o = r2o(&["gate", "/no/such/workspace"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("scenario.json");
    fs::write(&garbage, "{\"scenario_id\": 3}").unwrap();
    let o = r2o(&["run-case", "traffic", "--scenario", s(&garbage), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("scenario"));

    assert_eq!(code(&r2o(&["run-case", "water"])), 1);
    assert_eq!(code(&r2o(&["run-case", "power", "--mode", "sometimes"])), 1);
    assert_eq!(code(&r2o(&["frobnicate"])), 1);
    assert_eq!(code(&r2o(&["--help"])), 0);
}

#[test]
fn broken_guarantee_exits_two() {
    // General feeders that can only drop to 80% of demand leave the
    // rotation unable to hold the disparity cap late in the day.
    let mut scn = power::fixture(power::DEFAULT_SEED);
    for f in scn.feeders.iter_mut().filter(|f| f.group == Group::General) {
        f.min_service_fraction = 0.8;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tight.json");
    fs::write(&path, CaseScenario::Power(scn).to_json().unwrap()).unwrap();
    let o = r2o(&["run-case", "power", "--scenario", s(&path), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("disparity"));
}
