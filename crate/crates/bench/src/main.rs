use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fstar_core::ao::{run_ao, AoSettings, AoState, BaselineKind};
use fstar_core::position::PositionTrace;
use fstar_core::scenario::Scenario;
use fstar_core::surface::{uniform_grid_layout, validate_layout};
use fstar_bench::config::{load_scenario, ScenarioConfig};
use fstar_bench::report::{verdicts, write_report};
use fstar_bench::sweep::{load_spec, run_sweep, workers_from_env, CellStatus};
use fstar_bench::{BenchError, Result};

#[derive(Parser)]
#[command(name = "fstar-bench", about = "Fluid STAR surface NOMA optimizer: runs, sweeps and config checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One optimization run.
    Run {
        /// Scenario JSON; the shipped reference when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "f-star")]
        scheme: BaselineKind,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for trace.jsonl, positions.csv, layout.csv and coeffs.csv.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Seeded parameter sweep.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checks a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn base_scenario(path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => load_scenario(p),
        None => ScenarioConfig::reference().to_scenario(),
    }
}

fn write(path: PathBuf, text: String) -> Result<()> {
    fs::write(&path, text).map_err(|e| BenchError::Io { path, source: e })
}

fn write_logs(dir: &Path, st: &AoState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::Io {
        path: dir.into(),
        source: e,
    })?;
    write(dir.join("trace.jsonl"), st.trace_jsonl())?;
    let mut rows = format!("sweep,{}\n", PositionTrace::csv_header());
    let per_sweep = st.layout.len().max(1);
    for (i, t) in st.position_traces.iter().enumerate() {
        rows.push_str(&format!("{},{}\n", i / per_sweep + 1, t.csv_row()));
    }
    write(dir.join("positions.csv"), rows)?;
    write(dir.join("layout.csv"), st.layout.to_csv())?;
    write(dir.join("coeffs.csv"), st.coeffs.to_csv())
}

fn run(scenario: Option<PathBuf>, scheme: BaselineKind, seed: Option<u64>, log_dir: Option<PathBuf>) -> Result<ExitCode> {
    let mut s = base_scenario(scenario.as_deref())?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let st = run_ao(&s, scheme, None, &AoSettings::default())?;
    if let Some(dir) = &log_dir {
        write_logs(dir, &st)?;
    }
    if let Some(f) = &st.failure {
        println!("{scheme} seed {}: infeasible: {f}", s.seed);
        return Ok(ExitCode::from(2));
    }
    let feas = st.feasibility(&s)?;
    println!("scheme      {scheme}");
    println!("seed        {}", s.seed);
    println!("sum rate    {:.6} bps/Hz", st.objective());
    println!("iterations  {} (converged: {})", st.iterations, st.converged);
    for (u, g) in s.users().into_iter().zip(&st.ratios) {
        println!("  {u}  SINR {:.4}  rate {:.4}", g, (1.0 + g).log2());
    }
    println!(
        "feasibility power {:.2e}  qos {:.2e}  sic {:.2e}  layout violations {}",
        feas.power_excess,
        feas.qos_shortfall,
        feas.sic_excess,
        validate_layout(&st.layout, &s).len()
    );
    Ok(ExitCode::SUCCESS)
}

fn sweep(spec_path: PathBuf, out: PathBuf) -> Result<ExitCode> {
    let spec = load_spec(&spec_path)?;
    let base = match &spec.scenario {
        Some(p) => {
            let p = if p.is_relative() {
                spec_path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p.clone()
            };
            load_scenario(&p)?
        }
        None => ScenarioConfig::reference().to_scenario()?,
    };
    let workers = workers_from_env();
    let cells = run_sweep(&spec, &base, &AoSettings::default(), workers)?;
    write_report(&cells, spec.parameter, &out)?;
    for v in verdicts(&cells, spec.parameter) {
        println!("[{}] {}: {}", if v.holds { "pass" } else { "FAIL" }, v.claim, v.detail);
    }
    let infeasible = cells.iter().filter(|c| c.status() != CellStatus::Ok).count();
    println!("{} runs, {infeasible} infeasible or failed; report in {}", cells.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn validate(path: PathBuf) -> Result<ExitCode> {
    let s = load_scenario(&path)?;
    let layout = uniform_grid_layout(&s)?;
    println!(
        "{}: M={} L={} K={} Q={}; initial grid spacing {:.4} m; valid",
        path.display(),
        s.antennas,
        s.elements,
        s.num_reflect(),
        s.num_transmit(),
        layout.min_pairwise_distance()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            scheme,
            seed,
            log_dir,
        } => run(scenario, scheme, seed, log_dir),
        Command::Sweep { spec, out } => sweep(spec, out),
        Command::Validate { scenario } => validate(scenario),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
