//! Experiment orchestration shared by the command-line tool and the test
//! suites: stationary runs, sweep rows, validation cells and CSV output.
//!
//! Cells are evaluated through [`par::map`] and always emitted in grid
//! order (density outer, cycle inner), so output is byte-identical for any
//! worker count.

use std::io::{self, Write};

use crate::analytic::solve_analytic;
use crate::config::{ExperimentConfig, Method};
use crate::error::{sequencing, Error, Result};
use crate::fundamentals::Scenario;
use crate::ltm::{detect_stationary, simulate, CumulativeFlowSeries, SolverOptions, StationaryResult};
use crate::mfd::{mfd_gbar, mfd_point, MfdPoint, PiMode};
use crate::optimizer::{
    congestion_level, optimal_cycle, sweep_optimum, CycleOptimum, CycleSweep, OptimalCycleResult,
};
use crate::par::{self, Jobs};

/// `x` with 9 significant digits, in the style of C's `%.9g`.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn status_text(err: &Error) -> String {
    format!("error: {err}").replace([',', '\n'], ";")
}

pub fn solve(scenario: &Scenario, options: &SolverOptions, method: Method) -> Result<CumulativeFlowSeries> {
    match method {
        Method::Simulate => simulate(scenario, options),
        Method::Analytic => solve_analytic(scenario, options),
    }
}

/// Stationarity check over as many period multiples as the run allows, up
/// to `options.m_max`.
pub fn stationary(series: &CumulativeFlowSeries, options: &SolverOptions) -> Result<StationaryResult> {
    let cycles = (series.duration() / series.scenario().plan.cycle() + 1e-9).floor() as usize;
    let m_max = options.m_max.min(cycles / 2);
    if m_max == 0 {
        return sequencing(format!("run of {cycles} cycles is too short for a stationarity check"));
    }
    detect_stationary(series, m_max, options.tolerance(series.scenario()))
}

pub fn run_stationary(
    scenario: &Scenario,
    options: &SolverOptions,
    method: Method,
) -> Result<(CumulativeFlowSeries, StationaryResult)> {
    let series = solve(scenario, options, method)?;
    let result = stationary(&series, options)?;
    Ok((series, result))
}

/// Violations of the conservation and signal invariants in one series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvariantReport {
    pub checked: usize,
    pub violations: usize,
    /// Description of the first violation.
    pub first: Option<String>,
}

impl InvariantReport {
    fn flag(&mut self, what: String) {
        self.violations += 1;
        if self.first.is_none() {
            self.first = Some(what);
        }
    }
}

/// Checks `0 <= dG <= C dt`, `dG = 0` on red steps, and nonnegative queue
/// and vacancy at every sample. Comparisons allow floating rounding of
/// order `1e-12` relative to the ring's storage `K L`.
pub fn check_invariants(series: &CumulativeFlowSeries) -> InvariantReport {
    let Scenario { fd, ring, .. } = series.scenario();
    let scale = 1e-12 * fd.jam_density() * ring.length();
    let cap = fd.capacity() * series.dt();
    let values = series.values();
    let mut report = InvariantReport::default();
    for n in 0..values.len() {
        report.checked += 1;
        let t = series.time(n);
        let lambda = series.queue(n).expect("sample is populated");
        let gamma = series.vacancy(n).expect("sample is populated");
        if lambda < -scale {
            report.flag(format!("queue {lambda} < 0 at t = {t}"));
        }
        if gamma < -scale {
            report.flag(format!("vacancy {gamma} < 0 at t = {t}"));
        }
        if n + 1 < values.len() {
            let step = values[n + 1] - values[n];
            if step < 0.0 {
                report.flag(format!("G decreases by {} at t = {t}", -step));
            }
            if step > cap + scale {
                report.flag(format!("increment {step} exceeds C dt at t = {t}"));
            }
            if series.grid().gate(series.scenario(), n) == 0.0 && step != 0.0 {
                report.flag(format!("increment {step} during red at t = {t}"));
            }
        }
    }
    report
}

fn cells(cfg: &ExperimentConfig) -> Result<Vec<(f64, f64)>> {
    let densities = cfg.densities()?;
    let cycles = cfg.cycles()?;
    Ok(densities
        .iter()
        .flat_map(|&k0| cycles.iter().map(move |&t| (k0, t)))
        .collect())
}

/// Stationary flow-rate of one cell, or the reason it is missing.
#[derive(Debug, Clone, PartialEq)]
pub enum SimOutcome {
    Converged(StationaryResult),
    NotConverged(StationaryResult),
    Failed(String),
}

impl SimOutcome {
    fn run(scenario: &Scenario, options: &SolverOptions, method: Method) -> Self {
        match run_stationary(scenario, options, method) {
            Ok((_, r)) if r.converged => SimOutcome::Converged(r),
            Ok((_, r)) => SimOutcome::NotConverged(r),
            Err(e) => SimOutcome::Failed(status_text(&e)),
        }
    }

    pub fn gbar(&self) -> Option<f64> {
        match self {
            SimOutcome::Converged(r) => Some(r.gbar),
            _ => None,
        }
    }

    pub fn status(&self) -> String {
        match self {
            SimOutcome::Converged(_) => "ok".into(),
            SimOutcome::NotConverged(r) => format!("not-converged (residual {})", fmt_g(r.residual)),
            SimOutcome::Failed(msg) => msg.clone(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, SimOutcome::Converged(_))
    }
}

fn sim_column(sim: &Option<SimOutcome>) -> (String, String) {
    match sim {
        None => (String::new(), "ok".into()),
        Some(outcome) => (outcome.gbar().map(fmt_g).unwrap_or_default(), outcome.status()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfdRow {
    pub density: f64,
    pub cycle: f64,
    pub point: Option<MfdPoint>,
    pub sim: Option<SimOutcome>,
    pub error: Option<String>,
}

impl MfdRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.sim.as_ref().is_none_or(SimOutcome::is_ok)
    }
}

pub const MFD_HEADER: &str = "k0,T,k1,k2,phi1,phi2,gbar_formula,gbar_sim,regime,status";

/// Closed-form diagram with exact effective green ratio over the density ×
/// cycle grid, optionally paired with a stationary run per cell.
pub fn mfd_sweep(cfg: &ExperimentConfig, with_sim: bool, jobs: Jobs) -> Result<Vec<MfdRow>> {
    let grid = cells(cfg)?;
    let options = cfg.solver();
    Ok(par::map(&grid, jobs, |&(density, cycle)| {
        let outcome = cfg.scenario(density, cycle).and_then(|s| {
            let point = mfd_point(&s.fd, &s.plan, &s.ring, PiMode::Exact)?;
            Ok((s, point))
        });
        match outcome {
            Ok((s, point)) => MfdRow {
                density,
                cycle,
                point: Some(point),
                sim: with_sim.then(|| SimOutcome::run(&s, &options, cfg.method)),
                error: None,
            },
            Err(e) => MfdRow { density, cycle, point: None, sim: None, error: Some(status_text(&e)) },
        }
    }))
}

pub fn write_mfd_csv<W: Write>(rows: &[MfdRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{MFD_HEADER}")?;
    for row in rows {
        let (k0, t) = (fmt_g(row.density), fmt_g(row.cycle));
        match (&row.point, &row.error) {
            (Some(p), None) => {
                let (sim, status) = sim_column(&row.sim);
                writeln!(
                    out,
                    "{k0},{t},{},{},{},{},{},{sim},{},{status}",
                    fmt_g(p.k1),
                    fmt_g(p.k2),
                    fmt_g(p.phi1),
                    fmt_g(p.phi2),
                    fmt_g(p.gbar),
                    p.regime
                )?;
            }
            (_, err) => writeln!(out, "{k0},{t},,,,,,,,{}", err.clone().unwrap_or_default())?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRow {
    pub density: f64,
    pub cycle: f64,
    pub ratio: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// `min(phi1, pi C, phi2)` with the configured green ratio treatment.
    pub objective: f64,
    pub sim: Option<SimOutcome>,
    pub error: Option<String>,
}

impl CycleRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.sim.as_ref().is_none_or(SimOutcome::is_ok)
    }
}

pub const CYCLE_HEADER: &str = "k0,T,pi,phi1,phi2,gbar_objective,gbar_sim,status";

/// Design objective against cycle length for every configured density.
pub fn cycle_sweep(cfg: &ExperimentConfig, with_sim: bool, jobs: Jobs) -> Result<Vec<CycleRow>> {
    let grid = cells(cfg)?;
    let options = cfg.solver();
    let mode = cfg.pi_mode();
    Ok(par::map(&grid, jobs, |&(density, cycle)| {
        let outcome = cfg.scenario(density, cycle).and_then(|s| {
            let point = mfd_point(&s.fd, &s.plan, &s.ring, mode)?;
            Ok((s, point))
        });
        match outcome {
            Ok((s, p)) => CycleRow {
                density,
                cycle,
                ratio: s.plan.ratio(),
                phi1: p.phi1,
                phi2: p.phi2,
                objective: p.phi1.min(p.cap).min(p.phi2),
                sim: with_sim.then(|| SimOutcome::run(&s, &options, cfg.method)),
                error: None,
            },
            Err(e) => CycleRow {
                density,
                cycle,
                ratio: f64::NAN,
                phi1: f64::NAN,
                phi2: f64::NAN,
                objective: f64::NAN,
                sim: None,
                error: Some(status_text(&e)),
            },
        }
    }))
}

pub fn write_cycle_csv<W: Write>(rows: &[CycleRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CYCLE_HEADER}")?;
    for row in rows {
        let (k0, t) = (fmt_g(row.density), fmt_g(row.cycle));
        match &row.error {
            None => {
                let (sim, status) = sim_column(&row.sim);
                writeln!(
                    out,
                    "{k0},{t},{},{},{},{},{sim},{status}",
                    fmt_g(row.ratio),
                    fmt_g(row.phi1),
                    fmt_g(row.phi2),
                    fmt_g(row.objective)
                )?;
            }
            Some(err) => writeln!(out, "{k0},{t},,,,,,{err}")?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeRow {
    pub density: f64,
    pub result: OptimalCycleResult,
    pub sweep: Option<CycleSweep>,
}

pub const OPTIMIZE_HEADER: &str =
    "k0,chi,regime,T_star,gbar_star,source,near_optimal,sweep_T,sweep_gbar";

/// Optimal cycle lengths per configured density, with an optional
/// brute-force cross-check on [`ExperimentConfig::sweep_grid`].
pub fn optimize(cfg: &ExperimentConfig, with_sweep: bool, jobs: Jobs) -> Result<Vec<OptimizeRow>> {
    let densities = cfg.densities()?;
    let fd = cfg.fd()?;
    let settings = cfg.optimizer();
    let grid = cfg.sweep_grid();
    let rows = par::map(&densities, jobs, |&density| {
        let ring = crate::fundamentals::RingConfig::new(cfg.length, density, &fd)?;
        let result = optimal_cycle(&fd, &ring, cfg.lost_time, cfg.green_share, &settings)?;
        let sweep = if with_sweep {
            Some(sweep_optimum(
                &fd,
                &ring,
                cfg.lost_time,
                cfg.green_share,
                &grid,
                settings.mode,
                Jobs::SEQUENTIAL,
            )?)
        } else {
            None
        };
        Ok(OptimizeRow { density, result, sweep })
    });
    rows.into_iter().collect()
}

pub fn optimum_text(result: &OptimalCycleResult) -> String {
    match &result.optimum {
        CycleOptimum::Finite(cycles) => cycles.iter().map(|&c| fmt_g(c)).collect::<Vec<_>>().join(";"),
        CycleOptimum::Unbounded { cap } => format!("unbounded (cap {})", fmt_g(*cap)),
    }
}

pub fn near_optimal_text(result: &OptimalCycleResult) -> String {
    result
        .near_optimal
        .iter()
        .map(|n| format!("{}:{}", fmt_g(n.cycle), fmt_g(n.gap)))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_optimize_csv<W: Write>(rows: &[OptimizeRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{OPTIMIZE_HEADER}")?;
    for row in rows {
        let r = &row.result;
        let (sweep_t, sweep_g) = match &row.sweep {
            Some(s) => (fmt_g(s.best_cycle), fmt_g(s.best_gbar)),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{sweep_t},{sweep_g}",
            fmt_g(row.density),
            fmt_g(r.chi),
            r.regime,
            optimum_text(r),
            fmt_g(r.gbar_star),
            r.source.as_str(),
            near_optimal_text(r)
        )?;
    }
    Ok(())
}

/// Agreement checks for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCell {
    pub density: f64,
    pub cycle: f64,
    pub dt: f64,
    /// Largest `|G_analytic - G_discrete|` over the common span (veh).
    pub equivalence_residual: f64,
    pub equivalence_tol: f64,
    /// `|gbar_sim - gbar_formula|` (veh/s); infinite without a stationary
    /// state.
    pub sim_residual: f64,
    pub sim_tol: f64,
    pub gbar_sim: f64,
    pub gbar_formula: f64,
    pub converged: bool,
    pub invariants: InvariantReport,
    pub error: Option<String>,
}

impl ValidationCell {
    pub fn passed(&self) -> bool {
        self.error.is_none()
            && self.converged
            && self.equivalence_residual <= self.equivalence_tol
            && self.sim_residual <= self.sim_tol
            && self.invariants.violations == 0
    }
}

/// Runs the discrete model to stationarity, the recursion over the same
/// span, and compares both against each other and the closed form.
pub fn validate_cell(cfg: &ExperimentConfig, density: f64, cycle: f64) -> ValidationCell {
    let mut cell = ValidationCell {
        density,
        cycle,
        dt: f64::NAN,
        equivalence_residual: f64::INFINITY,
        equivalence_tol: f64::NAN,
        sim_residual: f64::INFINITY,
        sim_tol: f64::NAN,
        gbar_sim: f64::NAN,
        gbar_formula: f64::NAN,
        converged: false,
        invariants: InvariantReport::default(),
        error: None,
    };
    if let Err(e) = fill_cell(cfg, &mut cell) {
        cell.error = Some(status_text(&e));
    }
    cell
}

fn fill_cell(cfg: &ExperimentConfig, cell: &mut ValidationCell) -> Result<()> {
    let s = cfg.scenario(cell.density, cell.cycle)?;
    let options = cfg.solver();
    let discrete = simulate(&s, &options)?;
    let dt = discrete.dt();
    cell.dt = dt;
    let c = s.fd.capacity();
    cell.equivalence_tol = cfg.equivalence_tol * s.ring.vehicles();
    cell.sim_tol = (cfg.sim_tol_dt * c * dt / s.plan.cycle()).max(cfg.sim_tol_floor * c);
    cell.gbar_formula = mfd_gbar(&s.fd, &s.plan, &s.ring)?.gbar;
    cell.invariants = check_invariants(&discrete);

    let cycles_run = (discrete.duration() / s.plan.cycle()).round() as usize;
    let replay = SolverOptions { max_cycles: cycles_run, early_exit: false, ..options };
    let analytic = solve_analytic(&s, &replay)?;
    let analytic_invariants = check_invariants(&analytic);
    cell.invariants.checked += analytic_invariants.checked;
    cell.invariants.violations += analytic_invariants.violations;
    if cell.invariants.first.is_none() {
        cell.invariants.first = analytic_invariants.first;
    }
    cell.equivalence_residual = discrete
        .values()
        .iter()
        .zip(analytic.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let result = stationary(&discrete, &options)?;
    cell.converged = result.converged;
    if result.converged {
        cell.gbar_sim = result.gbar;
        cell.sim_residual = (result.gbar - cell.gbar_formula).abs();
    }
    Ok(())
}

pub fn validate(cfg: &ExperimentConfig, jobs: Jobs) -> Result<Vec<ValidationCell>> {
    let grid = cells(cfg)?;
    Ok(par::map(&grid, jobs, |&(density, cycle)| validate_cell(cfg, density, cycle)))
}

pub const VALIDATE_HEADER: &str =
    "k0,T,dt,equivalence_residual,equivalence_tol,gbar_sim,gbar_formula,sim_residual,sim_tol,invariant_violations,status";

pub fn write_validate_csv<W: Write>(cells: &[ValidationCell], mut out: W) -> io::Result<()> {
    writeln!(out, "{VALIDATE_HEADER}")?;
    for c in cells {
        let status = match (&c.error, c.passed()) {
            (Some(e), _) => e.clone(),
            (None, true) => "pass".into(),
            (None, false) if !c.converged => "fail: not-converged".into(),
            (None, false) => "fail".into(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{status}",
            fmt_g(c.density),
            fmt_g(c.cycle),
            fmt_g(c.dt),
            fmt_g(c.equivalence_residual),
            fmt_g(c.equivalence_tol),
            fmt_g(c.gbar_sim),
            fmt_g(c.gbar_formula),
            fmt_g(c.sim_residual),
            fmt_g(c.sim_tol),
            c.invariants.violations
        )?;
    }
    Ok(())
}

/// Congestion level per density, exposed for reports.
pub fn congestion_levels(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let fd = cfg.fd()?;
    cfg.densities()?
        .into_iter()
        .map(|k0| Ok(congestion_level(&fd, &crate::fundamentals::RingConfig::new(cfg.length, k0, &fd)?)))
        .collect()
}
