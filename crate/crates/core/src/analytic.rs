//! Large-time boundary-flow recursion.
//!
//! Once every wave lag lies in the past, the boundary flow during green is
//! the smallest of three candidates: the forward (free-flow) wave, the
//! backward (congested) wave, and discharge at capacity since the start of
//! the green window. During red it stays at the value reached at the end of
//! green. Before that point the discrete model handles the initial
//! transient.

use crate::error::{domain, sequencing, Result};
use crate::fundamentals::Scenario;
use crate::ltm::{advance, drive, CumulativeFlowSeries, SolverOptions};

/// Where a grid time falls within its signal cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// `t - iT` in `(0, pi T]`; `offset` is `t - iT`.
    Green { cycle: usize, offset: f64 },
    /// `t - iT` in `(pi T, T]`.
    Red { cycle: usize },
}

fn phase(series: &CumulativeFlowSeries, m: usize) -> Phase {
    let grid = series.grid();
    let dt = series.dt();
    match (grid.cycle_steps(), grid.green_steps()) {
        (Some(cs), Some(gs)) => {
            let i = (m - 1) / cs;
            let r = m - i * cs;
            if r <= gs {
                Phase::Green { cycle: i, offset: r as f64 * dt }
            } else {
                Phase::Red { cycle: i }
            }
        }
        _ => {
            let plan = &series.scenario().plan;
            let t = m as f64 * dt;
            let i = ((t / plan.cycle()).ceil() - 1.0).max(0.0) as usize;
            let offset = t - i as f64 * plan.cycle();
            if offset <= plan.green_time() * (1.0 + 1e-12) {
                Phase::Green { cycle: i, offset }
            } else {
                Phase::Red { cycle: i }
            }
        }
    }
}

fn check_history(series: &CumulativeFlowSeries, m: usize) -> Result<()> {
    if m == 0 || m > series.len() {
        return sequencing(format!(
            "sample {m} cannot be computed from history ending at {}",
            series.last_index()
        ));
    }
    let grid = series.grid();
    let deepest = grid.forward().whole.max(grid.backward().whole);
    if m <= deepest {
        return sequencing(format!(
            "sample {m} precedes the longest wave lag ({deepest} steps)"
        ));
    }
    Ok(())
}

/// `G` at the earlier time `t` (already populated, or inside the step that
/// ends at sample `m`).
fn history_at(series: &CumulativeFlowSeries, t: f64, m: usize) -> Result<f64> {
    if t <= (m - 1) as f64 * series.dt() + 1e-9 * series.dt() {
        series.value_at(t)
    } else {
        // inside the current step, which starts on a red plateau
        Ok(series.values()[m - 1])
    }
}

fn three_waves(
    series: &CumulativeFlowSeries,
    forward: f64,
    backward: f64,
    cycle_start: f64,
    offset: f64,
) -> f64 {
    let Scenario { fd, ring, .. } = series.scenario();
    (forward + ring.vehicles())
        .min(backward + ring.vacancies(fd))
        .min(cycle_start + offset * fd.capacity())
}

/// `G(t)` for a green sample `m`:
/// `min{G(t - L/V) + k0 L, G(t - L/W) + (K - k0) L, G(iT) + (t - iT) C}`.
pub fn recurse_green(series: &CumulativeFlowSeries, m: usize) -> Result<f64> {
    check_history(series, m)?;
    let Phase::Green { cycle, offset } = phase(series, m) else {
        return domain(format!("sample {m} is not in an effective green window"));
    };
    let grid = series.grid();
    let cycle_start = match grid.cycle_steps() {
        Some(cs) if grid.is_signal_aligned() => series.values()[cycle * cs],
        _ => history_at(series, cycle as f64 * series.scenario().plan.cycle(), m)?,
    };
    Ok(three_waves(
        series,
        series.lagged(m, grid.forward()),
        series.lagged(m, grid.backward()),
        cycle_start,
        offset,
    ))
}

/// `G(t)` for a red sample `m`: the value reached at the end of green,
/// `G((i + pi) T)`.
pub fn recurse_red(series: &CumulativeFlowSeries, m: usize) -> Result<f64> {
    check_history(series, m)?;
    let Phase::Red { cycle } = phase(series, m) else {
        return domain(format!("sample {m} is not in an effective red window"));
    };
    let grid = series.grid();
    if let (Some(cs), Some(gs)) = (grid.cycle_steps(), grid.green_steps()) {
        return Ok(series.values()[cycle * cs + gs]);
    }
    let plan = &series.scenario().plan;
    let Scenario { fd, ring, .. } = series.scenario();
    let start = cycle as f64 * plan.cycle();
    let green_end = start + plan.green_time();
    if green_end <= (m - 1) as f64 * series.dt() {
        return series.value_at(green_end);
    }
    // green ended inside the current step: evaluate the green recursion there
    Ok(three_waves(
        series,
        series.value_at(green_end - ring.forward_lag(fd))?,
        series.value_at(green_end - ring.backward_lag(fd))?,
        history_at(series, start, m)?,
        plan.green_time(),
    ))
}

/// Time after which the recursion replaces the discrete steps: the first
/// cycle boundary strictly after both wave lags.
pub fn activation_time(scenario: &Scenario) -> f64 {
    let Scenario { fd, plan, ring } = scenario;
    let lag = ring.forward_lag(fd).max(ring.backward_lag(fd));
    ((lag / plan.cycle()).floor() + 1.0) * plan.cycle()
}

/// Same driver as the discrete simulation, but samples after
/// [`activation_time`] come from the large-time recursion.
pub fn solve_analytic(scenario: &Scenario, options: &SolverOptions) -> Result<CumulativeFlowSeries> {
    let activation = activation_time(scenario);
    drive(scenario, options, |series| {
        let m = series.len();
        let t = m as f64 * series.dt();
        if t <= activation + 1e-9 * series.dt() {
            return advance(series).map(|_| ());
        }
        let next = match phase(series, m) {
            Phase::Green { .. } => recurse_green(series, m)?,
            Phase::Red { .. } => recurse_red(series, m)?,
        };
        series.push(next);
        Ok(())
    })
}
