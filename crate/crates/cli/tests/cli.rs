use std::path::Path;
use std::process::{Command, Output};

use dmimo_core::harness::{CELL_POWER_COLUMNS, SUMMARY_COLUMNS, TRACE_COLUMNS, USERS_COLUMNS};
use dmimo_core::{CovarianceSet, SocProgram};

const SMALL: &str = "\
[system]
cells = 2
users_per_cell = 2
arrays_per_cell = 2
antennas_per_array = 4
coherence_samples = 200
rho_tr = 10.0
sigma2 = 1.0
";

fn dmimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmimo")).args(args).output().expect("binary runs")
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn column_counts(path: &Path) -> Vec<usize> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().len()).collect()
}

#[test]
fn run_writes_tables_with_documented_schema() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = dmimo(&["run", "-s", &scenario, "--sweep", "4x1,4x2", "--out", out.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for (file, width) in [
        ("users.csv", USERS_COLUMNS.len()),
        ("summary.csv", SUMMARY_COLUMNS.len()),
        ("cell_power.csv", CELL_POWER_COLUMNS.len()),
        ("trace.csv", TRACE_COLUMNS.len()),
    ] {
        let counts = column_counts(&out.join(file));
        assert!(counts.len() > 1, "{file} has no rows");
        assert!(counts.iter().all(|&c| c == width), "{file}: {counts:?}");
    }
    // 2 points x 2 schemes x 4 users
    assert_eq!(column_counts(&out.join("users.csv")).len(), 1 + 16);
    assert_eq!(column_counts(&out.join("summary.csv")).len(), 1 + 4);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("maxmin") && stdout.contains("equal"));
}

#[test]
fn runs_and_replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for out in [&a, &b] {
        let o = dmimo(&["run", "-s", &scenario, "--sweep", "4x2", "--mc-draws", "2000", "--seed", "9", "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest = a.join("manifest.json");
    let o = dmimo(&["replay", manifest.to_str().unwrap(), "-o", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for file in ["users.csv", "summary.csv", "cell_power.csv", "trace.csv", "manifest.json"] {
        let first = std::fs::read(a.join(file)).unwrap();
        assert_eq!(first, std::fs::read(b.join(file)).unwrap(), "{file} differs between runs");
        assert_eq!(first, std::fs::read(c.join(file)).unwrap(), "{file} differs after replay");
    }
}

#[test]
fn grid_flags_and_sweep_file_agree() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let sweep = dir.path().join("sweep.toml");
    std::fs::write(&sweep, "antennas = [2, 4]\narrays = [1]\n").unwrap();
    let out1 = dir.path().join("grid");
    let out2 = dir.path().join("file");
    let o = dmimo(&["run", "-s", &scenario, "--antennas", "2,4", "--arrays", "1", "--schemes", "equal", "-o", out1.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = dmimo(&["run", "-s", &scenario, "--sweep-file", sweep.to_str().unwrap(), "--schemes", "equal", "-o", out2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(out1.join("users.csv")).unwrap(), std::fs::read(out2.join("users.csv")).unwrap());
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &SMALL.replace("rho_tr = 10.0", "rho_tr = -1.0"));
    let o = dmimo(&["run", "-s", &scenario, "-o", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.rho_tr"));

    let scenario = write_scenario(dir.path(), SMALL);
    let o = dmimo(&["run", "-s", &scenario, "--schemes", "zf", "-o", "unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schemes"));

    let o = dmimo(&["run", "-s", &scenario, "--sweep", "4x9", "-o", "unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep"));
}

#[test]
fn failed_points_are_recorded_and_fail_check_mode() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let out = dir.path().join("o");
    let o = dmimo(&["run", "-s", &scenario, "--sweep", "4x1", "--epsilon=-1", "-o", out.to_str().unwrap(), "--check"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("failed") && summary.contains("bisection.epsilon"));
    // the equal-power row of the same point still succeeded
    assert!(summary.lines().any(|l| l.contains(",equal,ok,")));
}

#[test]
fn dumps_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let cov = dir.path().join("cov.txt");
    let prog = dir.path().join("prog.txt");
    assert!(dmimo(&["dump-covariance", "-s", &scenario, "-o", cov.to_str().unwrap()]).status.success());
    assert!(dmimo(&["dump-program", "-s", &scenario, "--gamma", "0.5", "-o", prog.to_str().unwrap()]).status.success());
    let set = CovarianceSet::read_text(std::io::BufReader::new(std::fs::File::open(&cov).unwrap())).unwrap();
    assert_eq!(set.len(), 2 * 2 * 2 * 2);
    let program = SocProgram::from_text(&std::fs::read_to_string(&prog).unwrap()).unwrap();
    assert_eq!(program.num_vars(), 8);
    assert_eq!(program.cones.len(), 4 + 2);
}

#[test]
fn init_scenario_parses() {
    let o = dmimo(&["init-scenario"]);
    assert!(o.status.success());
    let cfg = dmimo_core::ScenarioConfig::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.system.cells, 7);
    cfg.build().unwrap();
}
