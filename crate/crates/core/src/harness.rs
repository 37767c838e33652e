//! Parameter sweeps over antennas per array (`M`) and active arrays per cell
//! (`N`), with CSV and JSON export.
//!
//! A sweep point activates the first `N` arrays of every cell in stored
//! order. For the ring layout that is counterclockwise starting from bearing
//! 0° as seen from the cell centre.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::build_covariance_set;
use crate::error::{invalid, Error, Result};
use crate::estimation::EstimationSet;
use crate::power::{equal_power, maxmin_power, status_name, verify_power_constraint, BisectionParams, BisectionStep, PowerCheck};
use crate::rng::derive_seed;
use crate::scenario::ScenarioConfig;
use crate::sinr::{closed_form_sinr, compute_coefficients, monte_carlo_sinr, MonteCarloReport, PowerAllocation, SinrReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Equal,
    Maxmin,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Equal => "equal",
            Scheme::Maxmin => "maxmin",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "equal" => Ok(Scheme::Equal),
            "maxmin" | "max-min" => Ok(Scheme::Maxmin),
            other => Err(invalid("schemes", format!("unknown scheme `{other}` (expected equal or maxmin)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub antennas: usize,
    pub arrays: usize,
}

impl SweepPoint {
    /// Parses `MxN[,MxN...]`, e.g. `10x1,20x4`.
    pub fn parse_list(text: &str) -> Result<Vec<SweepPoint>> {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|item| {
                let (m, n) = item
                    .trim()
                    .split_once(['x', 'X'])
                    .ok_or_else(|| invalid("sweep", format!("`{item}` is not of the form MxN")))?;
                let parse = |v: &str, what: &str| {
                    v.trim().parse::<usize>().map_err(|_| invalid("sweep", format!("bad {what} in `{item}`")))
                };
                Ok(SweepPoint { antennas: parse(m, "antenna count")?, arrays: parse(n, "array count")? })
            })
            .collect()
    }

    /// Every combination, antennas varying fastest within each array count.
    pub fn grid(antennas: &[usize], arrays: &[usize]) -> Vec<SweepPoint> {
        arrays
            .iter()
            .flat_map(|&n| antennas.iter().map(move |&m| SweepPoint { antennas: m, arrays: n }))
            .collect()
    }
}

/// Sweep file: explicit `points = [[M, N], ...]` and/or a grid given by
/// `antennas = [...]` and `arrays = [...]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    #[serde(default)]
    pub points: Vec<[usize; 2]>,
    #[serde(default)]
    pub antennas: Vec<usize>,
    #[serde(default)]
    pub arrays: Vec<usize>,
}

impl SweepFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        if self.antennas.is_empty() != self.arrays.is_empty() {
            return Err(invalid("sweep.antennas", "antennas and arrays must be given together"));
        }
        let mut out: Vec<SweepPoint> = self.points.iter().map(|&[m, n]| SweepPoint { antennas: m, arrays: n }).collect();
        out.extend(SweepPoint::grid(&self.antennas, &self.arrays));
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Where the scenario came from; informational.
    pub scenario_path: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub sweep: Vec<SweepPoint>,
    pub schemes: Vec<Scheme>,
    pub monte_carlo: Option<MonteCarloSpec>,
    pub seed: u64,
    pub bisection: BisectionParams,
}

impl ExperimentSpec {
    pub fn new(scenario: ScenarioConfig, sweep: Vec<SweepPoint>, schemes: Vec<Scheme>) -> Self {
        Self {
            scenario_path: None,
            scenario,
            sweep,
            schemes,
            monte_carlo: None,
            seed: 0,
            bisection: BisectionParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(invalid("sweep", "must contain at least one point"));
        }
        if self.schemes.is_empty() {
            return Err(invalid("schemes", "must name at least one scheme"));
        }
        let max_arrays = self.scenario.system.arrays_per_cell;
        for p in &self.sweep {
            if p.antennas == 0 {
                return Err(invalid("sweep", "antenna counts must be at least 1"));
            }
            if p.arrays == 0 || p.arrays > max_arrays {
                return Err(invalid(
                    "sweep",
                    format!("array count {} outside 1..={max_arrays} (system.arrays_per_cell)", p.arrays),
                ));
            }
        }
        if let Some(mc) = &self.monte_carlo {
            if mc.draws == 0 {
                return Err(invalid("monte_carlo.draws", "must be positive"));
            }
        }
        self.scenario.build()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeOutcome {
    pub allocation: PowerAllocation,
    pub report: SinrReport,
    pub power: PowerCheck,
    /// Max-min only.
    pub gamma_star: Option<f64>,
    pub trace: Vec<BisectionStep>,
    pub monte_carlo: Option<MonteCarloReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point_index: usize,
    pub point: SweepPoint,
    pub scheme: Scheme,
    pub seed: u64,
    /// Error text when this point failed; the sweep carries on.
    pub outcome: std::result::Result<SchemeOutcome, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub spec: ExperimentSpec,
    /// Ordered by point, then by scheme as listed in the experiment spec.
    pub rows: Vec<SweepRow>,
}

impl SweepResults {
    pub fn find(&self, point: SweepPoint, scheme: Scheme) -> Option<&SchemeOutcome> {
        self.rows.iter().find(|r| r.point == point && r.scheme == scheme).and_then(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.outcome.is_err())
    }
}

fn run_point(spec: &ExperimentSpec, index: usize, point: SweepPoint) -> Result<Vec<SweepRow>> {
    let (base, one_ring) = spec.scenario.build()?;
    let scenario = base.with_antennas(point.antennas)?.truncate_arrays(point.arrays)?;
    let link = scenario.link();
    let covs = build_covariance_set(&scenario, &one_ring)?;
    let est = EstimationSet::build(&covs, link.rho_tr)?;
    let coeffs = compute_coefficients(&covs, &est)?;
    let point_seed = derive_seed(spec.seed, index as u64);
    let rows = spec
        .schemes
        .iter()
        .enumerate()
        .map(|(s, &scheme)| {
            let seed = derive_seed(point_seed, s as u64);
            let outcome = (|| -> Result<SchemeOutcome> {
                let (allocation, gamma_star, trace) = match scheme {
                    Scheme::Equal => (equal_power(&est)?, None, Vec::new()),
                    Scheme::Maxmin => {
                        let r = maxmin_power(&coeffs, link.sigma2, &spec.bisection)?;
                        (r.allocation, Some(r.gamma_star), r.trace)
                    }
                };
                let report = closed_form_sinr(&coeffs, &allocation, link.sigma2, link.coherence_samples)?;
                let power = verify_power_constraint(&allocation, &est)?;
                let monte_carlo = match &spec.monte_carlo {
                    Some(mc) => Some(monte_carlo_sinr(&covs, &est, &allocation, link.sigma2, link.coherence_samples, mc.draws, seed)?),
                    None => None,
                };
                Ok(SchemeOutcome { allocation, report, power, gamma_star, trace, monte_carlo })
            })();
            if let Err(e) = &outcome {
                log::warn!("point {index} ({}x{}) scheme {}: {e}", point.antennas, point.arrays, scheme.name());
            }
            SweepRow { point_index: index, point, scheme, seed, outcome: outcome.map_err(|e| e.to_string()) }
        })
        .collect();
    Ok(rows)
}

/// Runs every sweep point (in parallel) and every scheme at each point.
///
/// Errors in the scenario-to-coefficient stage of one point, and solver
/// failures, are recorded in that point's rows.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResults> {
    spec.validate()?;
    let rows = spec
        .sweep
        .par_iter()
        .enumerate()
        .map(|(index, &point)| {
            run_point(spec, index, point).unwrap_or_else(|e| {
                log::warn!("point {index} ({}x{}): {e}", point.antennas, point.arrays);
                spec.schemes
                    .iter()
                    .enumerate()
                    .map(|(s, &scheme)| SweepRow {
                        point_index: index,
                        point,
                        scheme,
                        seed: derive_seed(derive_seed(spec.seed, index as u64), s as u64),
                        outcome: Err(e.to_string()),
                    })
                    .collect()
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(SweepResults { spec: spec.clone(), rows })
}

pub const USERS_COLUMNS: [&str; 10] =
    ["point", "antennas", "arrays", "scheme", "cell", "user", "gamma", "se", "mc_gamma", "mc_gamma_stderr"];
pub const SUMMARY_COLUMNS: [&str; 12] = [
    "point",
    "antennas",
    "arrays",
    "scheme",
    "status",
    "sum_se",
    "min_se",
    "min_gamma",
    "gamma_star",
    "max_cell_power",
    "power_ok",
    "error",
];
pub const CELL_POWER_COLUMNS: [&str; 6] = ["point", "antennas", "arrays", "scheme", "cell", "power"];
pub const TRACE_COLUMNS: [&str; 10] = [
    "point",
    "antennas",
    "arrays",
    "scheme",
    "iteration",
    "gamma_min",
    "gamma_max",
    "gamma_probe",
    "verdict",
    "solver_iterations",
];

pub const USERS_FILE: &str = "users.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CELL_POWER_FILE: &str = "cell_power.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    spec: &'a ExperimentSpec,
    point_seeds: Vec<u64>,
    files: [&'static str; 4],
    failures: usize,
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?)))
}

fn prefix(row: &SweepRow) -> [String; 4] {
    [
        row.point_index.to_string(),
        row.point.antennas.to_string(),
        row.point.arrays.to_string(),
        row.scheme.name().to_string(),
    ]
}

/// Writes the CSV tables and `manifest.json` into `dir` (created if
/// missing). Returns the paths written.
pub fn export(results: &SweepResults, dir: &Path) -> Result<Vec<PathBuf>> {
    if results.rows.is_empty() {
        return Err(invalid("results", "nothing to export"));
    }
    std::fs::create_dir_all(dir)?;

    let mut users = writer(dir, USERS_FILE)?;
    let mut summary = writer(dir, SUMMARY_FILE)?;
    let mut cells = writer(dir, CELL_POWER_FILE)?;
    let mut trace = writer(dir, TRACE_FILE)?;
    users.write_record(USERS_COLUMNS)?;
    summary.write_record(SUMMARY_COLUMNS)?;
    cells.write_record(CELL_POWER_COLUMNS)?;
    trace.write_record(TRACE_COLUMNS)?;

    for row in &results.rows {
        let head = prefix(row);
        match &row.outcome {
            Ok(out) => {
                let r = &out.report;
                for j in 0..r.cells {
                    for k in 0..r.users {
                        let idx = j * r.users + k;
                        let (mc, mc_se) = match &out.monte_carlo {
                            Some(m) => (m.report.gamma[idx].to_string(), m.gamma_stderr[idx].to_string()),
                            None => (String::new(), String::new()),
                        };
                        let tail = [j.to_string(), k.to_string(), r.gamma[idx].to_string(), r.se[idx].to_string(), mc, mc_se];
                        users.write_record(head.iter().chain(tail.iter()))?;
                    }
                }
                let max_power = out.power.per_cell.iter().copied().fold(0.0, f64::max);
                let tail = [
                    "ok".to_string(),
                    r.sum_se.to_string(),
                    r.min_se().to_string(),
                    r.min_gamma().to_string(),
                    out.gamma_star.map(|g| g.to_string()).unwrap_or_default(),
                    max_power.to_string(),
                    out.power.pass.to_string(),
                    String::new(),
                ];
                summary.write_record(head.iter().chain(tail.iter()))?;
                for (l, p) in out.power.per_cell.iter().enumerate() {
                    cells.write_record(head.iter().cloned().chain([l.to_string(), p.to_string()]))?;
                }
                for s in &out.trace {
                    let tail = [
                        s.iteration.to_string(),
                        s.gamma_min.to_string(),
                        s.gamma_max.to_string(),
                        s.gamma_probe.to_string(),
                        status_name(s.status).to_string(),
                        s.solver_iterations.to_string(),
                    ];
                    trace.write_record(head.iter().chain(tail.iter()))?;
                }
            }
            Err(e) => {
                let mut tail = vec!["failed".to_string()];
                tail.extend(std::iter::repeat_n(String::new(), 6));
                tail.push(e.clone());
                summary.write_record(head.iter().chain(tail.iter()))?;
            }
        }
    }
    for w in [&mut users, &mut summary, &mut cells, &mut trace] {
        w.flush()?;
    }

    let point_seeds = (0..results.spec.sweep.len()).map(|i| derive_seed(results.spec.seed, i as u64)).collect();
    let manifest = Manifest {
        tool: "dmimo",
        version: env!("CARGO_PKG_VERSION"),
        spec: &results.spec,
        point_seeds,
        files: [USERS_FILE, SUMMARY_FILE, CELL_POWER_FILE, TRACE_FILE],
        failures: results.failures().count(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut f = BufWriter::new(File::create(&manifest_path)?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    std::io::Write::write_all(&mut f, b"\n")?;

    Ok([USERS_FILE, SUMMARY_FILE, CELL_POWER_FILE, TRACE_FILE, MANIFEST_FILE].iter().map(|f| dir.join(f)).collect())
}

/// Reads the spec back out of a manifest written by [`export`].
pub fn load_manifest_spec(path: &Path) -> Result<ExperimentSpec> {
    #[derive(Deserialize)]
    struct Partial {
        spec: ExperimentSpec,
    }
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str::<Partial>(&text)?.spec)
}
