use std::io::{self, Write};

use crate::error::{sequencing, Result};
use crate::fundamentals::Scenario;

use super::grid::{Lag, TimeGrid};

/// Cumulative boundary flow `G` sampled on a uniform grid, `G(0) = 0`.
///
/// The series owns the parameters that generated it so that the derived
/// observables (flow-rate, queue, vacancy) can be evaluated without extra
/// context.
#[derive(Debug, Clone)]
pub struct CumulativeFlowSeries {
    scenario: Scenario,
    grid: TimeGrid,
    values: Vec<f64>,
}

impl CumulativeFlowSeries {
    /// Empty history holding only `G(0) = 0`.
    pub fn new(scenario: Scenario, grid: TimeGrid) -> Self {
        Self { scenario, grid, values: vec![0.0] }
    }

    /// Wraps precomputed samples. `values[0]` must be zero.
    pub fn from_values(scenario: Scenario, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        match values.first() {
            Some(0.0) => Ok(Self { scenario, grid, values }),
            _ => sequencing("a cumulative flow series must start at G(0) = 0"),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the last populated sample.
    pub fn last_index(&self) -> usize {
        self.values.len() - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.grid.dt()
    }

    /// Simulated time span.
    pub fn duration(&self) -> f64 {
        self.time(self.last_index())
    }

    pub fn get(&self, n: usize) -> Result<f64> {
        match self.values.get(n) {
            Some(&v) => Ok(v),
            None => sequencing(format!(
                "sample {n} requested but history ends at {}",
                self.last_index()
            )),
        }
    }

    pub(crate) fn reserve(&mut self, additional: usize) {
        self.values.reserve(additional);
    }

    pub(crate) fn push(&mut self, value: f64) {
        self.values.push(value);
    }

    /// `G(m dt - lag)` by linear interpolation between neighboring samples.
    /// Requires `m dt > lag`.
    pub(crate) fn lagged(&self, m: usize, lag: Lag) -> f64 {
        let upper = m - lag.whole;
        if lag.frac == 0.0 {
            self.values[upper]
        } else {
            lag.frac * self.values[upper - 1] + (1.0 - lag.frac) * self.values[upper]
        }
    }

    /// `G(t)` at an arbitrary time inside the populated span.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let pos = t / self.grid.dt();
        let last = self.last_index() as f64;
        if !(pos >= -1e-9 && pos <= last + 1e-9) {
            return sequencing(format!("time {t} s outside the populated span"));
        }
        let pos = pos.clamp(0.0, last);
        let lo = pos.floor() as usize;
        let w = pos - lo as f64;
        if w < 1e-9 || lo == self.last_index() {
            return Ok(self.values[lo]);
        }
        if 1.0 - w < 1e-9 {
            return Ok(self.values[lo + 1]);
        }
        Ok((1.0 - w) * self.values[lo] + w * self.values[lo + 1])
    }

    /// Average flow-rate over the step starting at sample `n`.
    pub fn flow_rate(&self, n: usize) -> Result<f64> {
        let next = self.get(n + 1)?;
        Ok((next - self.values[n]) / self.grid.dt())
    }

    /// Queue size `lambda(t)`: vehicles that could cross the boundary but
    /// have not.
    pub fn queue(&self, n: usize) -> Result<f64> {
        let g = self.get(n)?;
        let ring = &self.scenario.ring;
        let lag = self.grid.forward();
        if n <= lag.whole {
            Ok(ring.density() * self.scenario.fd.free_flow_speed() * self.time(n) - g)
        } else {
            Ok(self.lagged(n, lag) + ring.vehicles() - g)
        }
    }

    /// Vacancy size `gamma(t)`: free space that could be entered but has
    /// not.
    pub fn vacancy(&self, n: usize) -> Result<f64> {
        let g = self.get(n)?;
        let Scenario { fd, ring, .. } = &self.scenario;
        let lag = self.grid.backward();
        if n <= lag.whole {
            Ok((fd.jam_density() - ring.density()) * fd.wave_speed() * self.time(n) - g)
        } else {
            Ok(self.lagged(n, lag) + ring.vacancies(fd) - g)
        }
    }

    /// Writes `t,G,g,lambda,gamma,beta`, one row per sample.
    ///
    /// `g` is the flow-rate over the step leaving the sample (empty on the
    /// last row) and `beta` the green fraction of that step. Floats use the
    /// shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,G,g,lambda,gamma,beta")?;
        for n in 0..self.len() {
            let g = self
                .flow_rate(n)
                .map(|v| format!("{v:?}"))
                .unwrap_or_default();
            let lambda = self.queue(n).expect("sample is populated");
            let gamma = self.vacancy(n).expect("sample is populated");
            let beta = self.grid.gate(&self.scenario, n);
            writeln!(
                out,
                "{:?},{:?},{},{:?},{:?},{:?}",
                self.time(n),
                self.values[n],
                g,
                lambda,
                gamma,
                beta
            )?;
        }
        Ok(())
    }
}
