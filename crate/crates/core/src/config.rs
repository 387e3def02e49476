//! Flat TOML experiment configuration.
//!
//! Every key is optional and falls back to the defaults below. Grid-valued
//! keys accept a number, an array, or a `"start:stop:step"` string.
//!
//! | key | unit | default |
//! |-----|------|---------|
//! | `free_flow_speed` | m/s | 20 |
//! | `wave_speed` | m/s | 5 |
//! | `jam_density` | veh/m | 1/7 |
//! | `length` | m | 1200 |
//! | `density` | veh/m | unset |
//! | `density_ratio` | multiples of the critical density | unset |
//! | `lost_time` | s | 3 |
//! | `green_share` | 1 | 0.5 |
//! | `cycle` | s | 60 |
//! | `dt` | s | 0.1 |
//! | `max_cycles` | cycles | 200 |
//! | `m_max` | cycles | 24 |
//! | `tol` | veh | `1e-6 k0 L + 1e-9` |
//! | `method` | `simulate` or `analytic` | `simulate` |
//! | `exact_pi` | bool | false |
//! | `cycle_cap` | s | 600 |
//! | `near_gap` | 1 | 0.05 |
//! | `sweep_step` | s | 1 |
//! | `equivalence_tol` | multiples of `k0 L` | 1e-9 |
//! | `sim_tol_floor` | multiples of `C` | 1e-3 |
//! | `sim_tol_dt` | multiples of `C dt / T` | 2 |
//!
//! At most one of `density` and `density_ratio` may be set; with neither,
//! the density is 2/3 of the critical density.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::fundamentals::{FundamentalDiagram, RingConfig, Scenario, SignalPlan};
use crate::ltm::SolverOptions;
use crate::mfd::PiMode;
use crate::optimizer::OptimizerSettings;

const DEFAULT_DENSITY_RATIO: f64 = 1.0 / 1.5;

/// One value, an explicit list, or an inclusive arithmetic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub enum GridSpec {
    Single(f64),
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawGrid {
    Number(f64),
    Integer(i64),
    List(Vec<f64>),
    Text(String),
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        let spec = match raw {
            RawGrid::Number(v) => GridSpec::Single(v),
            RawGrid::Integer(v) => GridSpec::Single(v as f64),
            RawGrid::List(v) => GridSpec::List(v),
            RawGrid::Text(s) => s.parse()?,
        };
        spec.values()?;
        Ok(spec)
    }
}

impl From<GridSpec> for RawGrid {
    fn from(spec: GridSpec) -> Self {
        match spec {
            GridSpec::Single(v) => RawGrid::Number(v),
            GridSpec::List(v) => RawGrid::List(v),
            range @ GridSpec::Range { .. } => RawGrid::Text(range.to_string()),
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {p:?} in grid {s:?}")))
        };
        match parts.as_slice() {
            [v] => Ok(GridSpec::Single(num(v)?)),
            [a, b, c] => Ok(GridSpec::Range { start: num(a)?, stop: num(b)?, step: num(c)? }),
            _ => config(format!("grid {s:?} is not a number or start:stop:step")),
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Single(v) => write!(f, "{v}"),
            GridSpec::List(vs) => {
                let items: Vec<String> = vs.iter().map(f64::to_string).collect();
                write!(f, "[{}]", items.join(", "))
            }
            GridSpec::Range { start, stop, step } => write!(f, "{start}:{stop}:{step}"),
        }
    }
}

impl GridSpec {
    /// Expanded grid; nonempty, finite and strictly increasing.
    pub fn values(&self) -> Result<Vec<f64>> {
        let values = match self {
            GridSpec::Single(v) => vec![*v],
            GridSpec::List(vs) => vs.clone(),
            GridSpec::Range { start, stop, step } => {
                if !(step.is_finite() && *step > 0.0) {
                    return config(format!("grid step must be positive, got {step}"));
                }
                if !(start.is_finite() && stop.is_finite() && stop >= start) {
                    return config(format!("grid range {start}:{stop} is empty"));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| start + i as f64 * step).collect()
            }
        };
        if values.is_empty() {
            return config("grid is empty");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return config("grid values must be finite");
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return config(format!("grid {self} is not strictly increasing"));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Discrete link transmission model.
    #[default]
    Simulate,
    /// Discrete start-up followed by the large-time recursion.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub free_flow_speed: f64,
    pub wave_speed: f64,
    pub jam_density: f64,
    pub length: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density_ratio: Option<GridSpec>,
    pub lost_time: f64,
    pub green_share: f64,
    pub cycle: GridSpec,
    pub dt: f64,
    pub max_cycles: usize,
    pub m_max: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub method: Method,
    pub exact_pi: bool,
    pub cycle_cap: f64,
    pub near_gap: f64,
    pub sweep_step: f64,
    pub equivalence_tol: f64,
    pub sim_tol_floor: f64,
    pub sim_tol_dt: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        let optimizer = OptimizerSettings::default();
        Self {
            free_flow_speed: 20.0,
            wave_speed: 5.0,
            jam_density: 1.0 / 7.0,
            length: 1200.0,
            density: None,
            density_ratio: None,
            lost_time: 3.0,
            green_share: 0.5,
            cycle: GridSpec::Single(60.0),
            dt: solver.dt,
            max_cycles: solver.max_cycles,
            m_max: solver.m_max,
            tol: None,
            method: Method::Simulate,
            exact_pi: false,
            cycle_cap: optimizer.cycle_cap,
            near_gap: optimizer.near_gap,
            sweep_step: 1.0,
            equivalence_tol: 1e-9,
            sim_tol_floor: 1e-3,
            sim_tol_dt: 2.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn fd(&self) -> Result<FundamentalDiagram> {
        FundamentalDiagram::new(self.free_flow_speed, self.wave_speed, self.jam_density)
    }

    /// Densities (veh/m) from whichever density key is set.
    pub fn densities(&self) -> Result<Vec<f64>> {
        match (&self.density, &self.density_ratio) {
            (Some(d), None) => d.values(),
            (None, Some(r)) => {
                let kbar = self.fd()?.critical_density();
                Ok(r.values()?.into_iter().map(|x| x * kbar).collect())
            }
            (Some(_), Some(_)) => config("set only one of density and density_ratio"),
            (None, None) => Ok(vec![DEFAULT_DENSITY_RATIO * self.fd()?.critical_density()]),
        }
    }

    pub fn cycles(&self) -> Result<Vec<f64>> {
        self.cycle.values()
    }

    pub fn scenario(&self, density: f64, cycle: f64) -> Result<Scenario> {
        let fd = self.fd()?;
        let plan = SignalPlan::new(cycle, self.lost_time, self.green_share)?;
        let ring = RingConfig::new(self.length, density, &fd)?;
        Scenario::new(fd, plan, ring)
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            dt: self.dt,
            max_cycles: self.max_cycles,
            m_max: self.m_max,
            tol: self.tol,
            ..SolverOptions::default()
        }
    }

    pub fn pi_mode(&self) -> PiMode {
        if self.exact_pi {
            PiMode::Exact
        } else {
            PiMode::Nominal
        }
    }

    pub fn optimizer(&self) -> OptimizerSettings {
        OptimizerSettings {
            cycle_cap: self.cycle_cap,
            near_gap: self.near_gap,
            mode: self.pi_mode(),
            ..OptimizerSettings::default()
        }
    }

    /// Cycle grid of the brute-force optimum search: `sweep_step` apart,
    /// above `2 delta`, up to `cycle_cap`.
    pub fn sweep_grid(&self) -> Vec<f64> {
        let floor = 2.0 * self.lost_time;
        let first = (floor / self.sweep_step).floor() as usize + 1;
        let last = (self.cycle_cap / self.sweep_step + 1e-9).floor() as usize;
        (first..=last).map(|i| i as f64 * self.sweep_step).collect()
    }

    /// Rechecks every physical and numerical invariant.
    pub fn validate(&self) -> Result<()> {
        let densities = self.densities()?;
        let cycles = self.cycles()?;
        for &k0 in &densities {
            for &cycle in &cycles {
                self.scenario(k0, cycle)?;
            }
        }
        self.solver().validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return config(format!("dt must be positive, got {}", self.dt));
        }
        let positive = [
            ("cycle_cap", self.cycle_cap),
            ("sweep_step", self.sweep_step),
            ("sim_tol_dt", self.sim_tol_dt),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return config(format!("{key} must be positive, got {v}"));
            }
        }
        let nonnegative = [
            ("near_gap", self.near_gap),
            ("equivalence_tol", self.equivalence_tol),
            ("sim_tol_floor", self.sim_tol_floor),
        ];
        for (key, v) in nonnegative {
            if !(v.is_finite() && v >= 0.0) {
                return config(format!("{key} must be nonnegative, got {v}"));
            }
        }
        if self.cycle_cap <= 2.0 * self.lost_time {
            return config("cycle_cap must exceed twice the lost time");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert!((cfg.densities().unwrap()[0] - 1.0 / 52.5).abs() < 1e-15);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn grid_shorthand() {
        let cfg = ExperimentConfig::from_toml("cycle = \"20:305:15\"\ndensity = [0.0, 0.01]").unwrap();
        let cycles = cfg.cycles().unwrap();
        assert_eq!(cycles.len(), 20);
        assert_eq!(cycles[0], 20.0);
        assert_eq!(cycles[19], 305.0);
        assert_eq!(cfg.densities().unwrap(), vec![0.0, 0.01]);
        let cfg = ExperimentConfig::from_toml("cycle = 90").unwrap();
        assert_eq!(cfg.cycles().unwrap(), vec![90.0]);
    }

    #[test]
    fn round_trip_is_idempotent() {
        let text = "cycle = \"20:305:15\"\ndensity_ratio = [0.5, 1, 2]\ntol = 1e-7\nmethod = \"analytic\"\n";
        let once = ExperimentConfig::from_toml(text).unwrap().to_toml();
        let twice = ExperimentConfig::from_toml(&once).unwrap().to_toml();
        assert_eq!(once, twice);
        assert_eq!(ExperimentConfig::from_toml(&once).unwrap().method, Method::Analytic);
    }

    #[test]
    fn rejects_invalid_files() {
        let bad = [
            "cycle = \"60:20:5\"",
            "cycle = [60, 60]",
            "cycle = []",
            "cycle = 5",
            "cycle = \"a:b\"",
            "density = 0.2",
            "density = 0.01\ndensity_ratio = 1",
            "wave_speed = -1",
            "green_share = 1.5",
            "max_cycles = 0",
            "unknown_key = 1",
            "dt = 0",
        ];
        for text in bad {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_)) | Err(Error::Domain(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn sweep_grid_bounds() {
        let cfg = ExperimentConfig::default();
        let grid = cfg.sweep_grid();
        assert_eq!(grid[0], 7.0);
        assert_eq!(*grid.last().unwrap(), 600.0);
    }
}
