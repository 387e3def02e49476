use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ringflow::config::ExperimentConfig;
use ringflow::harness::{self, fmt_g, near_optimal_text, optimum_text};
use ringflow::par::Jobs;
use ringflow::Error;

/// Experiments on a ring road controlled by one pretimed signal.
#[derive(Debug, Parser)]
#[command(name = "ringflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one (density, cycle) point and report its stationary state.
    Simulate(Common),
    /// Closed-form diagram over the density and cycle grids.
    MfdSweep {
        #[command(flatten)]
        common: Common,
        /// Add a simulated stationary flow-rate per cell.
        #[arg(long)]
        with_sim: bool,
    },
    /// Design objective against cycle length for each density.
    CycleSweep {
        #[command(flatten)]
        common: Common,
        /// Add a simulated stationary flow-rate per cell.
        #[arg(long)]
        with_sim: bool,
    },
    /// Optimal cycle lengths for each density.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Cross-check each optimum with a brute-force cycle sweep.
        #[arg(long)]
        with_sweep: bool,
    },
    /// Check solver agreement, closed-form agreement and invariants per cell.
    Validate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment file (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the exact effective green ratio inside the wave branches.
    #[arg(long)]
    exact_pi: bool,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    jobs: Option<usize>,
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Debug)]
enum Failure {
    Config(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) => Failure::Config(e.to_string()),
            Error::Sequencing(_) => Failure::Other(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

struct Session {
    cfg: ExperimentConfig,
    jobs: Jobs,
    out: Option<PathBuf>,
}

impl Session {
    fn open(common: &Common) -> Result<Self, Failure> {
        let mut cfg = match &common.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if common.exact_pi {
            cfg.exact_pi = true;
        }
        if common.jobs == Some(0) {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        Ok(Self { cfg, jobs: Jobs(common.jobs), out: common.out.clone() })
    }

    fn csv(&self) -> Result<Box<dyn Write>, Failure> {
        Ok(match &self.out {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    /// Human-readable report: standard output when the CSV goes to a file,
    /// standard error otherwise.
    fn report(&self, text: &str) {
        if self.out.is_some() {
            println!("{text}");
        } else {
            eprintln!("{text}");
        }
    }
}

fn simulate(common: &Common) -> Result<u8, Failure> {
    let s = Session::open(common)?;
    let (densities, cycles) = (s.cfg.densities()?, s.cfg.cycles()?);
    if densities.len() != 1 || cycles.len() != 1 {
        return Err(Failure::Config("simulate needs a single density and a single cycle".into()));
    }
    let scenario = s.cfg.scenario(densities[0], cycles[0])?;
    let options = s.cfg.solver();
    let series = harness::solve(&scenario, &options, s.cfg.method)?;
    let mut out = s.csv()?;
    series.write_csv(&mut out)?;
    out.flush()?;
    drop(out);
    let summary = match harness::stationary(&series, &options) {
        Ok(r) => {
            s.report(&format!(
                "gbar={} m={} converged={} residual={} cycles={}",
                fmt_g(r.gbar),
                r.period_multiple,
                r.converged,
                fmt_g(r.residual),
                fmt_g(r.cycles_run)
            ));
            r.converged
        }
        Err(e) => {
            s.report(&format!("gbar= m=0 converged=false residual=inf ({e})"));
            false
        }
    };
    Ok(if summary { 0 } else { EXIT_NOT_CONVERGED })
}

fn mfd_sweep(common: &Common, with_sim: bool) -> Result<u8, Failure> {
    let s = Session::open(common)?;
    let rows = harness::mfd_sweep(&s.cfg, with_sim, s.jobs)?;
    let mut out = s.csv()?;
    harness::write_mfd_csv(&rows, &mut out)?;
    out.flush()?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        s.report(&format!("{failed} of {} cells flagged in the status column", rows.len()));
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn cycle_sweep(common: &Common, with_sim: bool) -> Result<u8, Failure> {
    let s = Session::open(common)?;
    let rows = harness::cycle_sweep(&s.cfg, with_sim, s.jobs)?;
    let mut out = s.csv()?;
    harness::write_cycle_csv(&rows, &mut out)?;
    out.flush()?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        s.report(&format!("{failed} of {} cells flagged in the status column", rows.len()));
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

fn optimize(common: &Common, with_sweep: bool) -> Result<u8, Failure> {
    let s = Session::open(common)?;
    let rows = harness::optimize(&s.cfg, with_sweep, s.jobs)?;
    let mut out = s.csv()?;
    harness::write_optimize_csv(&rows, &mut out)?;
    out.flush()?;
    drop(out);

    let mut table = format!(
        "{:>12}  {:>8}  {:<11}  {:<22}  {:>12}  {:<13}  {}",
        "k0 (veh/m)", "chi", "regime", "T* (s)", "gbar* (veh/s)", "source", "near-optimal T:gap"
    );
    for row in &rows {
        let r = &row.result;
        table.push_str(&format!(
            "\n{:>12}  {:>8}  {:<11}  {:<22}  {:>12}  {:<13}  {}",
            fmt_g(row.density),
            fmt_g(r.chi),
            r.regime.as_str(),
            optimum_text(r),
            fmt_g(r.gbar_star),
            r.source.as_str(),
            near_optimal_text(r)
        ));
        if let Some(sweep) = &row.sweep {
            table.push_str(&format!(
                " | sweep T={} gbar={}",
                fmt_g(sweep.best_cycle),
                fmt_g(sweep.best_gbar)
            ));
        }
    }
    s.report(&table);
    Ok(0)
}

fn validate(common: &Common) -> Result<u8, Failure> {
    let s = Session::open(common)?;
    let cells = harness::validate(&s.cfg, s.jobs)?;
    let mut out = s.csv()?;
    harness::write_validate_csv(&cells, &mut out)?;
    out.flush()?;
    drop(out);

    let passed = cells.iter().filter(|c| c.passed()).count();
    let max_eq = cells.iter().map(|c| c.equivalence_residual).fold(0.0, f64::max);
    let max_sim = cells.iter().map(|c| c.sim_residual).fold(0.0, f64::max);
    let mut report = format!(
        "{passed} of {} cells pass; max equivalence residual {} veh; max simulation residual {} veh/s",
        cells.len(),
        fmt_g(max_eq),
        fmt_g(max_sim)
    );
    for c in cells.iter().filter(|c| !c.passed()) {
        report.push_str(&format!("\nFAIL k0={} T={}", fmt_g(c.density), fmt_g(c.cycle)));
        if let Some(e) = &c.error {
            report.push_str(&format!(": {e}"));
        }
        if let Some(first) = &c.invariants.first {
            report.push_str(&format!(": {first}"));
        }
    }
    s.report(&report);
    Ok(if passed == cells.len() { 0 } else { EXIT_VALIDATION })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(common) => simulate(common),
        Command::MfdSweep { common, with_sim } => mfd_sweep(common, *with_sim),
        Command::CycleSweep { common, with_sim } => cycle_sweep(common, *with_sim),
        Command::Optimize { common, with_sweep } => optimize(common, *with_sweep),
        Command::Validate(common) => validate(common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
