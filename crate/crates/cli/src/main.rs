use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dmimo_core::harness::{self, ExperimentSpec, MonteCarloSpec, Scheme, SweepFile, SweepPoint, SweepResults};
use dmimo_core::power::{build_feasibility_problem, SlackMode};
use dmimo_core::{build_covariance_set, compute_coefficients, EstimationSet, ScenarioConfig};

#[derive(Parser)]
#[command(name = "dmimo", version, about = "Downlink power control experiments for distributed-array massive MIMO")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep over (M, N) points and write CSV tables plus a manifest.
    Run(RunArgs),
    /// Re-run the experiment recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        check: bool,
    },
    /// Print a scenario file with default settings.
    InitScenario,
    /// Write every covariance matrix of a scenario in text form.
    DumpCovariance {
        #[arg(short, long)]
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write the max-min feasibility program for one target SINR.
    DumpProgram {
        #[arg(short, long)]
        scenario: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = Mode::Eliminated)]
        mode: Mode,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Eliminated,
    Explicit,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file.
    #[arg(short, long)]
    scenario: PathBuf,
    /// Inline sweep, `MxN` points separated by commas (e.g. `10x1,20x4`).
    #[arg(long, conflicts_with_all = ["sweep_file", "antennas"])]
    sweep: Option<String>,
    /// Sweep TOML file with `points = [[M, N], ...]` and/or `antennas`/`arrays` lists.
    #[arg(long)]
    sweep_file: Option<PathBuf>,
    /// Antenna counts for a grid sweep (with --arrays).
    #[arg(long, value_delimiter = ',', requires = "arrays")]
    antennas: Vec<usize>,
    /// Active array counts for a grid sweep (with --antennas).
    #[arg(long, value_delimiter = ',', requires = "antennas")]
    arrays: Vec<usize>,
    /// Schemes to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "equal,maxmin")]
    schemes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bisection termination width in linear SINR.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Monte-Carlo draws for a cross-check of every closed-form SINR.
    #[arg(long)]
    mc_draws: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
    /// Exit nonzero if any point fails, any max-min allocation breaks a
    /// cell budget, or max-min loses to a per-cell feasible equal-power
    /// allocation in min SINR.
    #[arg(long)]
    check: bool,
}

fn build_spec(args: &RunArgs) -> Result<ExperimentSpec> {
    let scenario = ScenarioConfig::load(&args.scenario).with_context(|| format!("loading {}", args.scenario.display()))?;
    let sweep = if let Some(inline) = &args.sweep {
        SweepPoint::parse_list(inline)?
    } else if let Some(path) = &args.sweep_file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        SweepFile::from_toml_str(&text)?.points()?
    } else if !args.antennas.is_empty() {
        SweepPoint::grid(&args.antennas, &args.arrays)
    } else {
        vec![SweepPoint { antennas: scenario.system.antennas_per_array, arrays: scenario.system.arrays_per_cell }]
    };
    let schemes = args.schemes.iter().map(|s| s.parse::<Scheme>()).collect::<dmimo_core::Result<Vec<_>>>()?;
    let mut spec = ExperimentSpec::new(scenario, sweep, schemes);
    spec.scenario_path = Some(args.scenario.clone());
    spec.seed = args.seed;
    spec.bisection.epsilon = args.epsilon;
    spec.monte_carlo = args.mc_draws.map(|draws| MonteCarloSpec { draws });
    Ok(spec)
}

/// Problems found in assertion mode.
fn assertion_failures(results: &SweepResults) -> Vec<String> {
    let mut problems = Vec::new();
    let epsilon = results.spec.bisection.epsilon;
    for row in &results.rows {
        let tag = format!("point {} ({}x{}) {}", row.point_index, row.point.antennas, row.point.arrays, row.scheme.name());
        match &row.outcome {
            Err(e) => problems.push(format!("{tag}: {e}")),
            Ok(out) => {
                if row.scheme == Scheme::Maxmin && !out.power.pass {
                    problems.push(format!("{tag}: cell power {:?} exceeds budget", out.power.per_cell));
                }
            }
        }
    }
    for point in &results.spec.sweep {
        if let (Some(eq), Some(mm)) = (results.find(*point, Scheme::Equal), results.find(*point, Scheme::Maxmin)) {
            let (e, m) = (eq.report.min_gamma(), mm.report.min_gamma());
            if !eq.power.pass {
                log::info!("{}x{}: equal power exceeds a cell budget; dominance not asserted", point.antennas, point.arrays);
            } else if m < e - epsilon {
                problems.push(format!("{}x{}: max-min min SINR {m} below equal power {e}", point.antennas, point.arrays));
            }
        }
    }
    problems
}

fn print_summary(results: &SweepResults) {
    println!("{:>5} {:>4} {:>4} {:>7} {:>10} {:>8} {:>10}", "point", "M", "N", "scheme", "sum_se", "min_se", "max_power");
    for row in &results.rows {
        match &row.outcome {
            Ok(out) => println!(
                "{:>5} {:>4} {:>4} {:>7} {:>10.3} {:>8.4} {:>10.6}",
                row.point_index,
                row.point.antennas,
                row.point.arrays,
                row.scheme.name(),
                out.report.sum_se,
                out.report.min_se(),
                out.power.per_cell.iter().copied().fold(0.0, f64::max)
            ),
            Err(e) => println!("{:>5} {:>4} {:>4} {:>7} failed: {e}", row.point_index, row.point.antennas, row.point.arrays, row.scheme.name()),
        }
    }
}

fn run(spec: &ExperimentSpec, out: &Path, check: bool) -> Result<bool> {
    let results = harness::run_sweep(spec)?;
    let written = harness::export(&results, out)?;
    print_summary(&results);
    for path in written {
        log::info!("wrote {}", path.display());
    }
    if !check {
        return Ok(true);
    }
    let problems = assertion_failures(&results);
    for p in &problems {
        eprintln!("check failed: {p}");
    }
    Ok(problems.is_empty())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let spec = build_spec(&args)?;
            run(&spec, &args.out, args.check)
        }
        Command::Replay { manifest, out, check } => {
            let spec = harness::load_manifest_spec(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            run(&spec, &out, check)
        }
        Command::InitScenario => {
            print!("{}", default_scenario());
            Ok(true)
        }
        Command::DumpCovariance { scenario, out } => {
            let (sc, params) = ScenarioConfig::load(&scenario)?.build()?;
            let covs = build_covariance_set(&sc, &params)?;
            let mut w = create(&out)?;
            covs.write_text(&mut w)?;
            w.flush()?;
            Ok(true)
        }
        Command::DumpProgram { scenario, gamma, mode, out } => {
            let (sc, params) = ScenarioConfig::load(&scenario)?.build()?;
            let covs = build_covariance_set(&sc, &params)?;
            let est = EstimationSet::build(&covs, sc.rho_tr())?;
            let coeffs = compute_coefficients(&covs, &est)?;
            let mode = match mode {
                Mode::Eliminated => SlackMode::Eliminated,
                Mode::Explicit => SlackMode::Explicit,
            };
            let program = build_feasibility_problem(&coeffs, gamma, sc.sigma2(), mode)?.to_program();
            let mut w = create(&out)?;
            w.write_all(program.to_text().as_bytes())?;
            w.flush()?;
            Ok(true)
        }
    }
}

fn default_scenario() -> String {
    let text = "[system]\ncells = 7\nusers_per_cell = 10\narrays_per_cell = 4\nantennas_per_array = 20\n\
                coherence_samples = 200\nrho_tr = 10.0\nsigma2 = 1.0\n\
                [propagation]\nangular_spread_deg = 10.0\nantenna_spacing = 0.5\npathloss_exponent = 3.76\nedge_snr_db = 0.0\n";
    let cfg = ScenarioConfig::from_toml_str(text).expect("built-in scenario parses");
    cfg.to_toml_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
