//! Discrete link transmission model for the signalized ring road.
//!
//! Only the boundary flow `G(t) = A(0, t)` is tracked. Each step computes the
//! link demand and supply from delayed values of `G`, takes the smaller of
//! the two, and lets it through if the signal is green.

mod grid;
mod series;
mod stationary;

pub use grid::{pick_dt, Lag, TimeGrid};
pub use series::CumulativeFlowSeries;
pub use stationary::{default_tolerance, detect_stationary, StationaryResult};

use crate::error::{config, sequencing, Result};
use crate::fundamentals::Scenario;

/// Settings shared by the discrete and the large-time solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Requested step (s). With `align` set this is an upper bound.
    pub dt: f64,
    /// Shrink `dt` so that the green window (and, when possible, the cycle
    /// and both lags) fall on the grid.
    pub align: bool,
    pub max_cycles: usize,
    /// Largest period multiple considered by stationarity detection.
    pub m_max: usize,
    /// Absolute throughput tolerance (veh); `None` selects
    /// [`default_tolerance`].
    pub tol: Option<f64>,
    /// Stop as soon as a stationary state is detected.
    pub early_exit: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { dt: 0.1, align: true, max_cycles: 200, m_max: 24, tol: None, early_exit: true }
    }
}

impl SolverOptions {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt, ..Self::default() }
    }

    pub fn grid(&self, scenario: &Scenario) -> Result<TimeGrid> {
        if self.align {
            TimeGrid::aligned(scenario, self.dt)
        } else {
            TimeGrid::new(scenario, self.dt)
        }
    }

    pub fn tolerance(&self, scenario: &Scenario) -> f64 {
        self.tol.unwrap_or_else(|| default_tolerance(scenario))
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.max_cycles == 0 {
            return config("max_cycles must be at least 1");
        }
        if self.m_max == 0 {
            return config("m_max must be at least 1");
        }
        if let Some(tol) = self.tol {
            if !(tol.is_finite() && tol >= 0.0) {
                return config(format!("tolerance must be nonnegative, got {tol}"));
            }
        }
        Ok(())
    }
}

fn check_populated(series: &CumulativeFlowSeries, n: usize) -> Result<()> {
    if n > series.last_index() {
        return sequencing(format!(
            "step at sample {n} requested but history ends at {}",
            series.last_index()
        ));
    }
    Ok(())
}

/// Vehicles the upstream link can send during the step leaving sample `n`.
pub fn demand_step(series: &CumulativeFlowSeries, n: usize) -> Result<f64> {
    check_populated(series, n)?;
    let Scenario { fd, ring, .. } = series.scenario();
    let dt = series.dt();
    let g = series.values()[n];
    let m = n + 1;
    let lag = series.grid().forward();
    let available = if m <= lag.whole {
        m as f64 * dt * ring.density() * fd.free_flow_speed() - g
    } else {
        series.lagged(m, lag) + ring.vehicles() - g
    };
    Ok(available.min(fd.capacity() * dt))
}

/// Vehicles the downstream link can receive during the step leaving sample `n`.
pub fn supply_step(series: &CumulativeFlowSeries, n: usize) -> Result<f64> {
    check_populated(series, n)?;
    let Scenario { fd, ring, .. } = series.scenario();
    let dt = series.dt();
    let g = series.values()[n];
    let m = n + 1;
    let lag = series.grid().backward();
    let available = if m <= lag.whole {
        m as f64 * dt * (fd.jam_density() - ring.density()) * fd.wave_speed() - g
    } else {
        series.lagged(m, lag) + ring.vacancies(fd) - g
    };
    Ok(available.min(fd.capacity() * dt))
}

/// Appends the next sample and returns the vehicles moved in this step.
pub fn advance(series: &mut CumulativeFlowSeries) -> Result<f64> {
    let n = series.last_index();
    let gate = series.grid().gate(series.scenario(), n);
    let moved = if gate == 0.0 {
        0.0
    } else {
        gate * demand_step(series, n)?.min(supply_step(series, n)?)
    };
    series.push(series.values()[n] + moved);
    Ok(moved)
}

/// Total number of steps covering `max_cycles` cycles.
pub(crate) fn horizon_steps(scenario: &Scenario, grid: &TimeGrid, max_cycles: usize) -> usize {
    match grid.cycle_steps() {
        Some(cycle) => cycle * max_cycles,
        None => (max_cycles as f64 * scenario.plan.cycle() / grid.dt()).ceil() as usize,
    }
}

/// Runs the discrete model over `max_cycles` cycles, stopping early once a
/// stationary state has been detected when `early_exit` is set.
pub fn simulate(scenario: &Scenario, options: &SolverOptions) -> Result<CumulativeFlowSeries> {
    drive(scenario, options, |series| advance(series).map(|_| ()))
}

/// Shared driver loop: repeatedly calls `step` and probes for stationarity
/// at every cycle boundary.
pub(crate) fn drive<F>(
    scenario: &Scenario,
    options: &SolverOptions,
    mut step: F,
) -> Result<CumulativeFlowSeries>
where
    F: FnMut(&mut CumulativeFlowSeries) -> Result<()>,
{
    options.validate()?;
    let grid = options.grid(scenario)?;
    let total = horizon_steps(scenario, &grid, options.max_cycles);
    let tol = options.tolerance(scenario);
    let cycle_len = (scenario.plan.cycle() / grid.dt()).round().max(1.0) as usize;
    let mut series = CumulativeFlowSeries::new(*scenario, grid);
    series.reserve(total);
    for n in 1..=total {
        step(&mut series)?;
        if options.early_exit && n % cycle_len == 0 && n < total {
            let cycles = n / cycle_len;
            if stationary::probe(&series, cycles, options.m_max, tol) {
                break;
            }
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundamentals::{FundamentalDiagram, RingConfig, SignalPlan};

    const K: f64 = 1.0 / 7.0;

    fn scenario(density: f64, cycle: f64) -> Scenario {
        let fd = FundamentalDiagram::new(20.0, 5.0, K).unwrap();
        let plan = SignalPlan::new(cycle, 3.0, 0.5).unwrap();
        let ring = RingConfig::new(1200.0, density, &fd).unwrap();
        Scenario::new(fd, plan, ring).unwrap()
    }

    fn fresh(density: f64) -> CumulativeFlowSeries {
        let s = scenario(density, 60.0);
        let grid = TimeGrid::aligned(&s, 0.1).unwrap();
        CumulativeFlowSeries::new(s, grid)
    }

    #[test]
    fn demand_of_empty_ring_is_zero() {
        let series = fresh(0.0);
        assert_eq!(demand_step(&series, 0).unwrap(), 0.0);
    }

    #[test]
    fn critical_density_saturates_demand_and_supply() {
        let kbar = 1.0 / 35.0;
        let series = fresh(kbar);
        let cap = 4.0 / 7.0 * 0.1;
        assert!((demand_step(&series, 0).unwrap() - cap).abs() < 1e-15);
        assert!((supply_step(&series, 0).unwrap() - cap).abs() < 1e-15);
    }

    #[test]
    fn undersaturated_first_step_demand() {
        let series = fresh(1.0 / 35.0 / 1.5);
        // k0 V = 20 / 52.5 veh/s
        let expected = 0.1 * 20.0 / 52.5;
        assert!((demand_step(&series, 0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.0381).abs() < 1e-4);
    }

    #[test]
    fn dense_first_step_supply() {
        let series = fresh(2.0 / 35.0);
        let expected = 0.1 * 3.0 / 7.0;
        assert!((supply_step(&series, 0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn jammed_ring_has_no_supply() {
        let series = fresh(K);
        assert!(supply_step(&series, 0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn lookups_past_history_fail() {
        let series = fresh(0.01);
        assert!(matches!(demand_step(&series, 1), Err(crate::Error::Sequencing(_))));
        assert!(matches!(supply_step(&series, 5), Err(crate::Error::Sequencing(_))));
    }

    #[test]
    fn red_light_blocks_flow() {
        let mut series = fresh(1.0 / 35.0);
        for _ in 0..270 {
            advance(&mut series).unwrap();
        }
        let before = *series.values().last().unwrap();
        let moved = advance(&mut series).unwrap();
        assert_eq!(moved, 0.0);
        assert_eq!(*series.values().last().unwrap(), before);
    }

    #[test]
    fn critical_green_moves_at_capacity() {
        let mut series = fresh(1.0 / 35.0);
        for _ in 0..100 {
            let moved = advance(&mut series).unwrap();
            assert!((moved - 0.4 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_ring_stays_empty() {
        let series = simulate(&scenario(0.0, 60.0), &SolverOptions::default()).unwrap();
        assert!(series.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let s = scenario(0.02, 60.0);
        let opts = SolverOptions { max_cycles: 1, early_exit: false, ..SolverOptions::with_dt(1.0) };
        let series = simulate(&s, &opts).unwrap();
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,G,g,lambda,gamma,beta"));
        assert_eq!(lines.count(), series.len());
        let last = text.lines().last().unwrap();
        assert_eq!(last.split(',').nth(2), Some(""));
    }

    #[test]
    fn rejects_bad_options() {
        let s = scenario(0.02, 60.0);
        let zero = SolverOptions { max_cycles: 0, ..Default::default() };
        assert!(matches!(simulate(&s, &zero), Err(crate::Error::Config(_))));
        let unaligned = SolverOptions { align: false, ..SolverOptions::with_dt(50.0) };
        assert!(matches!(simulate(&s, &unaligned), Err(crate::Error::Config(_))));
    }
}
