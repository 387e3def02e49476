//! Physical and control parameters of the signalized ring road.
//!
//! Units are fixed throughout the crate: meters, seconds and vehicles, so
//! densities are veh/m and flow-rates veh/s.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Triangular flow-density relation `Q(k) = min(V k, (K - k) W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram {
    free_flow_speed: f64,
    wave_speed: f64,
    jam_density: f64,
}

impl FundamentalDiagram {
    /// `free_flow_speed` is V, `wave_speed` the magnitude W of the congested
    /// wave speed, `jam_density` is K.
    pub fn new(free_flow_speed: f64, wave_speed: f64, jam_density: f64) -> Result<Self> {
        for (name, v) in [
            ("free-flow speed", free_flow_speed),
            ("wave speed", wave_speed),
            ("jam density", jam_density),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return domain(format!("{name} must be finite and positive, got {v}"));
            }
        }
        Ok(Self { free_flow_speed, wave_speed, jam_density })
    }

    pub fn free_flow_speed(&self) -> f64 {
        self.free_flow_speed
    }

    pub fn wave_speed(&self) -> f64 {
        self.wave_speed
    }

    pub fn jam_density(&self) -> f64 {
        self.jam_density
    }

    /// Density at which the two branches meet, `W K / (V + W)`.
    pub fn critical_density(&self) -> f64 {
        self.wave_speed * self.jam_density / (self.free_flow_speed + self.wave_speed)
    }

    /// Maximum flow-rate `C = V * Kbar`.
    pub fn capacity(&self) -> f64 {
        self.free_flow_speed * self.critical_density()
    }

    pub fn flow(&self, density: f64) -> Result<f64> {
        if !(0.0..=self.jam_density).contains(&density) {
            return domain(format!(
                "density {density} outside [0, {}]",
                self.jam_density
            ));
        }
        Ok((self.free_flow_speed * density).min((self.jam_density - density) * self.wave_speed))
    }
}

/// Two-phase pretimed signal with start-up lost time.
///
/// The primary parameters are the cycle length, the lost time per phase and
/// the green allocation; the effective green ratio is derived from them. A
/// plan without lost time (`lost_time = 0`) has `effective_green_ratio() ==
/// green_share()`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    cycle: f64,
    lost_time: f64,
    green_share: f64,
    ratio: f64,
}

impl SignalPlan {
    pub fn new(cycle: f64, lost_time: f64, green_share: f64) -> Result<Self> {
        if !(cycle.is_finite() && cycle > 0.0) {
            return domain(format!("cycle length must be finite and positive, got {cycle}"));
        }
        let ratio = effective_green_ratio(cycle, lost_time, green_share)?;
        Ok(Self { cycle, lost_time, green_share, ratio })
    }

    /// Plan with a fixed effective green ratio and no lost time.
    pub fn without_lost_time(cycle: f64, ratio: f64) -> Result<Self> {
        Self::new(cycle, 0.0, ratio)
    }

    /// Same lost time and green allocation, different cycle length.
    pub fn with_cycle(&self, cycle: f64) -> Result<Self> {
        Self::new(cycle, self.lost_time, self.green_share)
    }

    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    pub fn lost_time(&self) -> f64 {
        self.lost_time
    }

    pub fn green_share(&self) -> f64 {
        self.green_share
    }

    /// Effective green ratio `(1 - 2 delta / T) pi0`.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Length of the effective green window in one cycle.
    pub fn green_time(&self) -> f64 {
        self.ratio * self.cycle
    }

    /// Signal indicator: 1 during effective green `[iT, iT + pi T]`, else 0.
    /// The closing instant of the green window counts as green.
    pub fn beta(&self, t: f64) -> u8 {
        let i = (t / self.cycle).floor();
        let offset = t - i * self.cycle;
        u8::from((0.0..=self.green_time()).contains(&offset))
    }

    /// Fraction of `[t0, t1)` covered by effective green windows.
    pub fn green_fraction(&self, t0: f64, t1: f64) -> f64 {
        debug_assert!(t1 > t0);
        let first = (t0 / self.cycle).floor() as i64;
        let last = (t1 / self.cycle).floor() as i64;
        let green: f64 = (first..=last)
            .map(|i| {
                let start = i as f64 * self.cycle;
                let end = start + self.green_time();
                (end.min(t1) - start.max(t0)).max(0.0)
            })
            .sum();
        (green / (t1 - t0)).clamp(0.0, 1.0)
    }
}

/// `(1 - 2 lost_time / cycle) * green_share`.
pub fn effective_green_ratio(cycle: f64, lost_time: f64, green_share: f64) -> Result<f64> {
    if !(lost_time.is_finite() && lost_time >= 0.0) {
        return domain(format!("lost time must be nonnegative, got {lost_time}"));
    }
    if !(green_share > 0.0 && green_share < 1.0) {
        return domain(format!("green share must lie in (0, 1), got {green_share}"));
    }
    if !(cycle > 2.0 * lost_time) {
        return domain(format!(
            "cycle length {cycle} leaves no effective green after lost time 2 x {lost_time}"
        ));
    }
    Ok((1.0 - 2.0 * lost_time / cycle) * green_share)
}

/// Ring length and uniform initial density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingConfig {
    length: f64,
    density: f64,
}

impl RingConfig {
    pub fn new(length: f64, density: f64, fd: &FundamentalDiagram) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return domain(format!("ring length must be finite and positive, got {length}"));
        }
        if !(0.0..=fd.jam_density()).contains(&density) {
            return domain(format!(
                "initial density {density} outside [0, {}]",
                fd.jam_density()
            ));
        }
        Ok(Self { length, density })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    /// Number of vehicles on the ring, `k0 L`.
    pub fn vehicles(&self) -> f64 {
        self.density * self.length
    }

    /// Number of vacant slots on the ring, `(K - k0) L`.
    pub fn vacancies(&self, fd: &FundamentalDiagram) -> f64 {
        (fd.jam_density() - self.density) * self.length
    }

    /// Free-flow traversal time `L / V`.
    pub fn forward_lag(&self, fd: &FundamentalDiagram) -> f64 {
        self.length / fd.free_flow_speed()
    }

    /// Backward-wave traversal time `L / W`.
    pub fn backward_lag(&self, fd: &FundamentalDiagram) -> f64 {
        self.length / fd.wave_speed()
    }
}

/// A complete parameter set for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub fd: FundamentalDiagram,
    pub plan: SignalPlan,
    pub ring: RingConfig,
}

impl Scenario {
    pub fn new(fd: FundamentalDiagram, plan: SignalPlan, ring: RingConfig) -> Result<Self> {
        // re-validate: the ring may have been built against another diagram
        RingConfig::new(ring.length(), ring.density(), &fd)?;
        Ok(Self { fd, plan, ring })
    }
}
