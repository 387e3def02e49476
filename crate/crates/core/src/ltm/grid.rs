use crate::error::{config, Result};
use crate::fundamentals::Scenario;

/// Relative tolerance for treating a ratio of times as an integer.
const SNAP_TOL: f64 = 1e-9;

/// Multiples of the green window tried when aligning the step size.
const ALIGN_SEARCH: usize = 4096;

fn snap(ratio: f64) -> Option<usize> {
    let n = ratio.round();
    ((ratio - n).abs() <= SNAP_TOL * ratio.max(1.0) && n >= 0.0).then_some(n as usize)
}

/// A delay expressed in steps: `(whole + frac) * dt` with `0 <= frac < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lag {
    pub whole: usize,
    pub frac: f64,
}

impl Lag {
    fn new(delay: f64, dt: f64) -> Self {
        let ratio = delay / dt;
        match snap(ratio) {
            Some(whole) => Self { whole, frac: 0.0 },
            None => {
                let whole = ratio.floor();
                Self { whole: whole as usize, frac: ratio - whole }
            }
        }
    }

    pub fn is_on_grid(&self) -> bool {
        self.frac == 0.0
    }

    pub fn steps(&self) -> f64 {
        self.whole as f64 + self.frac
    }
}

/// Uniform time grid for a scenario, with the signal windows and wave lags
/// expressed in steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    cycle_steps: Option<usize>,
    green_steps: Option<usize>,
    forward: Lag,
    backward: Lag,
}

impl TimeGrid {
    /// Grid with exactly the given step.
    ///
    /// The step may not exceed either signal window, or the shorter of the
    /// two wave lags (delayed lookups would then reach the step being
    /// computed).
    pub fn new(scenario: &Scenario, dt: f64) -> Result<Self> {
        let Scenario { fd, plan, ring } = scenario;
        if !(dt.is_finite() && dt > 0.0) {
            return config(format!("time step must be finite and positive, got {dt}"));
        }
        let green = plan.green_time();
        let red = plan.cycle() - green;
        if dt > green * (1.0 + SNAP_TOL) || dt > red * (1.0 + SNAP_TOL) {
            return config(format!(
                "time step {dt} s exceeds a signal window (green {green} s, red {red} s)"
            ));
        }
        let forward_lag = ring.forward_lag(fd);
        let backward_lag = ring.backward_lag(fd);
        if dt > forward_lag.min(backward_lag) * (1.0 + SNAP_TOL) {
            return config(format!(
                "time step {dt} s exceeds a wave traversal time ({forward_lag} s, {backward_lag} s)"
            ));
        }
        let cycle_steps = snap(plan.cycle() / dt);
        let green_steps = cycle_steps.and_then(|_| snap(green / dt));
        Ok(Self {
            dt,
            cycle_steps,
            green_steps,
            forward: Lag::new(forward_lag, dt),
            backward: Lag::new(backward_lag, dt),
        })
    }

    /// Grid whose step is the largest value not above `max_dt` that places
    /// the green window on the grid, preferring steps that also place the
    /// cycle boundaries and both wave lags on the grid.
    pub fn aligned(scenario: &Scenario, max_dt: f64) -> Result<Self> {
        let dt = pick_dt(scenario, max_dt)?;
        Self::new(scenario, dt)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn cycle_steps(&self) -> Option<usize> {
        self.cycle_steps
    }

    pub fn green_steps(&self) -> Option<usize> {
        self.green_steps
    }

    /// Steps of the free-flow lag `L / V`.
    pub fn forward(&self) -> Lag {
        self.forward
    }

    /// Steps of the backward-wave lag `L / W`.
    pub fn backward(&self) -> Lag {
        self.backward
    }

    /// True when cycle boundaries and green ends fall on grid points.
    pub fn is_signal_aligned(&self) -> bool {
        self.green_steps.is_some()
    }

    /// Fraction of the step `[n dt, (n+1) dt)` that is effective green.
    pub fn gate(&self, scenario: &Scenario, n: usize) -> f64 {
        match (self.cycle_steps, self.green_steps) {
            (Some(cycle), Some(green)) => {
                if n % cycle < green {
                    1.0
                } else {
                    0.0
                }
            }
            _ => scenario.plan.green_fraction(n as f64 * self.dt, (n + 1) as f64 * self.dt),
        }
    }
}

/// Largest step not above `max_dt` dividing the effective green time.
///
/// Candidates `pi T / n` are scanned in order of increasing `n`; the first
/// that also divides the cycle and both lags wins, then one dividing the
/// cycle only, then the plain green divisor.
pub fn pick_dt(scenario: &Scenario, max_dt: f64) -> Result<f64> {
    if !(max_dt.is_finite() && max_dt > 0.0) {
        return config(format!("time step must be finite and positive, got {max_dt}"));
    }
    let Scenario { fd, plan, ring } = scenario;
    let green = plan.green_time();
    let first = (green / max_dt * (1.0 - SNAP_TOL)).ceil().max(1.0) as usize;
    let divides = |dt: f64, span: f64| snap(span / dt).is_some();
    let lags = [ring.forward_lag(fd), ring.backward_lag(fd)];
    let candidates = || (first..first + ALIGN_SEARCH).map(|n| green / n as f64);

    if let Some(dt) = candidates()
        .find(|&dt| divides(dt, plan.cycle()) && lags.iter().all(|&lag| divides(dt, lag)))
    {
        return Ok(dt);
    }
    if let Some(dt) = candidates().find(|&dt| divides(dt, plan.cycle())) {
        return Ok(dt);
    }
    Ok(green / first as f64)
}
