use crate::error::{sequencing, Result};
use crate::fundamentals::Scenario;

use super::series::CumulativeFlowSeries;

/// Periodic state found at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryResult {
    /// Average flow-rate over the detected period (veh/s).
    pub gbar: f64,
    /// The detected period is `period_multiple` signal cycles.
    pub period_multiple: usize,
    pub cycles_run: f64,
    pub converged: bool,
    /// Largest deviation of the per-period throughput from its central
    /// value over the checked window (veh).
    pub residual: f64,
}

/// `1e-6 k0 L + 1e-9` vehicles.
pub fn default_tolerance(scenario: &Scenario) -> f64 {
    1e-6 * scenario.ring.vehicles() + 1e-9
}

fn max_lag(series: &CumulativeFlowSeries) -> f64 {
    let Scenario { fd, ring, .. } = series.scenario();
    ring.forward_lag(fd).max(ring.backward_lag(fd))
}

/// Throughput spread over one period multiple: returns `(central, residual)`
/// of `G(t + mT) - G(t)` over the trailing window, or `None` when the series
/// is too short for a window that starts after the longest wave lag.
///
/// The window covers `max(mT, L/W, L/V)` seconds of start times, so that a
/// constant throughput over it forces periodicity of all later samples.
fn period_spread(series: &CumulativeFlowSeries, m: usize) -> Option<(f64, f64)> {
    let cycle = series.scenario().plan.cycle();
    let shift_time = m as f64 * cycle;
    let lag = max_lag(series);
    let span = shift_time.max(lag);
    let end = series.duration();
    let start = end - shift_time - span;
    if start < lag - 1e-9 {
        return None;
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut record = |d: f64| {
        lo = lo.min(d);
        hi = hi.max(d);
    };
    let values = series.values();
    match series.grid().cycle_steps() {
        Some(cycle_steps) => {
            let shift = m * cycle_steps;
            let last = series.last_index();
            let first = last - shift - (span / series.dt()).round() as usize;
            for n in first..=last - shift {
                record(values[n + shift] - values[n]);
            }
        }
        None => {
            let dt = series.dt();
            let first = (start / dt).ceil() as usize;
            let stop = ((end - shift_time) / dt).floor() as usize;
            for (n, &v) in values.iter().enumerate().take(stop + 1).skip(first) {
                let t = n as f64 * dt;
                let ahead = series.value_at(t + shift_time).ok()?;
                record(ahead - v);
            }
        }
    }
    Some((0.5 * (lo + hi), 0.5 * (hi - lo)))
}

/// Smallest period multiple `m <= m_max` over which the cumulative flow
/// gains a constant amount, within `tol` vehicles.
///
/// The series must span at least `2 m_max` cycles. When no multiple
/// qualifies, the one with the smallest residual is reported with
/// `converged = false`.
pub fn detect_stationary(
    series: &CumulativeFlowSeries,
    m_max: usize,
    tol: f64,
) -> Result<StationaryResult> {
    let cycle = series.scenario().plan.cycle();
    let cycles_run = series.duration() / cycle;
    if m_max == 0 || cycles_run + 1e-9 < 2.0 * m_max as f64 {
        return sequencing(format!(
            "stationarity check over {m_max} cycle multiples needs {} cycles, series has {cycles_run:.3}",
            2 * m_max
        ));
    }
    let mut best: Option<StationaryResult> = None;
    for m in 1..=m_max {
        let Some((central, residual)) = period_spread(series, m) else {
            continue;
        };
        let candidate = StationaryResult {
            gbar: central / (m as f64 * cycle),
            period_multiple: m,
            cycles_run,
            converged: residual <= tol,
            residual,
        };
        if candidate.converged {
            return Ok(candidate);
        }
        if best.is_none_or(|b| residual < b.residual) {
            best = Some(candidate);
        }
    }
    Ok(best.unwrap_or(StationaryResult {
        gbar: f64::NAN,
        period_multiple: 0,
        cycles_run,
        converged: false,
        residual: f64::INFINITY,
    }))
}

/// Cheap test used at cycle boundaries during a run: screens each period
/// multiple on cycle-boundary samples, and confirms candidates on the full
/// window.
pub(crate) fn probe(series: &CumulativeFlowSeries, cycles: usize, m_max: usize, tol: f64) -> bool {
    let cycle = series.scenario().plan.cycle();
    let end = series.duration();
    for m in 1..=m_max.min(cycles / 2) {
        let screen = (0..=m).map(|j| {
            let t = end - j as f64 * cycle;
            let back = t - m as f64 * cycle;
            Some(series.value_at(t).ok()? - series.value_at(back).ok()?)
        });
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut ok = true;
        for d in screen {
            match d {
                Some(d) => {
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
                None => ok = false,
            }
        }
        if !ok || hi - lo > 2.0 * tol {
            continue;
        }
        if matches!(period_spread(series, m), Some((_, r)) if r <= tol) {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundamentals::{FundamentalDiagram, RingConfig, SignalPlan};
    use crate::ltm::TimeGrid;

    fn scenario(density: f64) -> Scenario {
        let fd = FundamentalDiagram::new(20.0, 5.0, 1.0 / 7.0).unwrap();
        let plan = SignalPlan::new(60.0, 3.0, 0.5).unwrap();
        let ring = RingConfig::new(1200.0, density, &fd).unwrap();
        Scenario::new(fd, plan, ring).unwrap()
    }

    /// Exact period-T state: `per_cycle` vehicles spread evenly over green.
    fn periodic(density: f64, per_cycle: f64, cycles: usize) -> CumulativeFlowSeries {
        let s = scenario(density);
        let grid = TimeGrid::aligned(&s, 0.5).unwrap();
        let cs = grid.cycle_steps().unwrap();
        let gs = grid.green_steps().unwrap();
        let mut values = vec![0.0];
        for n in 0..cs * cycles {
            let step = if n % cs < gs { per_cycle / gs as f64 } else { 0.0 };
            values.push(values[n] + step);
        }
        CumulativeFlowSeries::from_values(s, grid, values).unwrap()
    }

    #[test]
    fn flat_series_is_stationary() {
        let series = periodic(0.0, 0.0, 20);
        let r = detect_stationary(&series, 8, 1e-9).unwrap();
        assert!(r.converged);
        assert_eq!(r.period_multiple, 1);
        assert_eq!(r.gbar, 0.0);
    }

    #[test]
    fn constructed_periodic_state() {
        let series = periodic(0.02, 9.0, 20);
        let r = detect_stationary(&series, 8, 1e-9).unwrap();
        assert!(r.converged);
        assert_eq!(r.period_multiple, 1);
        assert!((r.gbar - 9.0 / 60.0).abs() < 1e-12);
        assert!(r.residual < 1e-9);
    }

    #[test]
    fn alternating_cycles_have_period_two() {
        let s = scenario(0.02);
        let grid = TimeGrid::aligned(&s, 0.5).unwrap();
        let cs = grid.cycle_steps().unwrap();
        let gs = grid.green_steps().unwrap();
        let mut values = vec![0.0];
        for n in 0..cs * 24 {
            let per_cycle = if (n / cs).is_multiple_of(2) { 8.0 } else { 10.0 };
            let step = if n % cs < gs { per_cycle / gs as f64 } else { 0.0 };
            values.push(values[n] + step);
        }
        let series = CumulativeFlowSeries::from_values(s, grid, values).unwrap();
        let r = detect_stationary(&series, 8, 1e-9).unwrap();
        assert!(r.converged);
        assert_eq!(r.period_multiple, 2);
        assert!((r.gbar - 18.0 / 120.0).abs() < 1e-12);
    }

    #[test]
    fn growing_throughput_is_not_stationary() {
        let s = scenario(0.02);
        let grid = TimeGrid::aligned(&s, 0.5).unwrap();
        let values: Vec<f64> = (0..=120 * 20).map(|n| 1e-6 * (n * n) as f64).collect();
        let series = CumulativeFlowSeries::from_values(s, grid, values).unwrap();
        let r = detect_stationary(&series, 4, 1e-9).unwrap();
        assert!(!r.converged);
        assert!(r.residual > 1e-9);
    }

    #[test]
    fn short_series_is_rejected() {
        let series = periodic(0.02, 9.0, 3);
        assert!(matches!(
            detect_stationary(&series, 8, 1e-9),
            Err(crate::Error::Sequencing(_))
        ));
    }
}
