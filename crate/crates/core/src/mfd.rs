//! Closed-form macroscopic fundamental diagram of stationary states.
//!
//! A wave lag (`L/V` or `L/W`) is split into whole cycles and a remainder;
//! these give two critical densities `k1 <= Kbar <= k2`. Below `k1` the
//! average flow-rate grows linearly from zero, between them it is capped at
//! `pi C`, above `k2` it falls linearly to zero at jam density.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, sequencing, Result};
use crate::fundamentals::{FundamentalDiagram, RingConfig, SignalPlan};
use crate::ltm::CumulativeFlowSeries;

/// Relative tolerance for snapping a lag/cycle ratio onto an integer.
const INTEGER_SNAP: f64 = 1e-12;

/// Which green ratio enters the critical densities and the `phi` branches.
///
/// `Exact` uses the plan's effective ratio `(1 - 2 delta / T) pi0`;
/// `Nominal` uses the green allocation `pi0`, which is accurate when both
/// lags are long compared with the lost time. The capacity cap `pi C`
/// always uses the exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiMode {
    #[default]
    Exact,
    Nominal,
}

impl PiMode {
    pub fn ratio(&self, plan: &SignalPlan) -> f64 {
        match self {
            PiMode::Exact => plan.ratio(),
            PiMode::Nominal => plan.green_share(),
        }
    }
}

/// `lag = theta T` with `theta = modulus + remainder`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveDecomposition {
    pub theta: f64,
    pub modulus: u64,
    pub remainder: f64,
}

pub fn decompose(lag: f64, cycle: f64) -> Result<WaveDecomposition> {
    if !(lag.is_finite() && lag > 0.0 && cycle.is_finite() && cycle > 0.0) {
        return domain(format!("lag {lag} and cycle {cycle} must be positive"));
    }
    let theta = lag / cycle;
    let nearest = theta.round();
    let whole = if (theta - nearest).abs() <= INTEGER_SNAP * theta.max(1.0) {
        nearest
    } else {
        theta.floor()
    };
    Ok(WaveDecomposition {
        theta,
        modulus: whole as u64,
        remainder: (theta - whole).max(0.0),
    })
}

impl WaveDecomposition {
    /// `(j + min(alpha / pi, 1)) / (j + alpha)`, the factor shared by both
    /// critical densities.
    fn density_factor(&self, ratio: f64) -> f64 {
        let j = self.modulus as f64;
        (j + (self.remainder / ratio).min(1.0)) / (j + self.remainder)
    }
}

/// Stationary-state density classes, bounded by `pi Kbar`, `Kbar` and
/// `K - pi C / W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    VerySparse,
    Sparse,
    Critical,
    Dense,
    VeryDense,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::VerySparse => "very-sparse",
            Regime::Sparse => "sparse",
            Regime::Critical => "critical",
            Regime::Dense => "dense",
            Regime::VeryDense => "very-dense",
        }
    }

    /// Classifies `density` with effective green ratio `ratio`; the critical
    /// class matches within `1e-12 K`.
    pub fn classify(fd: &FundamentalDiagram, ratio: f64, density: f64) -> Regime {
        let kbar = fd.critical_density();
        let jam = fd.jam_density();
        if (density - kbar).abs() <= 1e-12 * jam {
            Regime::Critical
        } else if density < ratio * kbar {
            Regime::VerySparse
        } else if density < kbar {
            Regime::Sparse
        } else if density <= jam - ratio * fd.capacity() / fd.wave_speed() {
            Regime::Dense
        } else {
            Regime::VeryDense
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalDensities {
    pub k1: f64,
    pub k2: f64,
    pub forward: WaveDecomposition,
    pub backward: WaveDecomposition,
}

/// Critical densities for a given green ratio.
pub fn critical_densities_with_ratio(
    fd: &FundamentalDiagram,
    ring: &RingConfig,
    cycle: f64,
    ratio: f64,
) -> Result<CriticalDensities> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return domain(format!("green ratio {ratio} outside (0, 1)"));
    }
    let forward = decompose(ring.forward_lag(fd), cycle)?;
    let backward = decompose(ring.backward_lag(fd), cycle)?;
    let k1 = forward.density_factor(ratio) * ratio * fd.critical_density();
    let k2 = fd.jam_density()
        - backward.density_factor(ratio) * ratio * fd.capacity() / fd.wave_speed();
    Ok(CriticalDensities { k1, k2, forward, backward })
}

/// `(k1, k2)` for the plan's exact effective green ratio.
pub fn critical_densities(
    fd: &FundamentalDiagram,
    plan: &SignalPlan,
    ring: &RingConfig,
) -> Result<(f64, f64)> {
    let c = critical_densities_with_ratio(fd, ring, plan.cycle(), plan.ratio())?;
    Ok((c.k1, c.k2))
}

/// One evaluated point of the diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfdPoint {
    pub density: f64,
    pub cycle: f64,
    /// Green ratio used inside `k1`, `k2`, `phi1`, `phi2`.
    pub ratio: f64,
    pub k1: f64,
    pub k2: f64,
    /// Forward-wave bound `(k0 / k1) pi C`.
    pub phi1: f64,
    /// Backward-wave bound `((K - k0) / (K - k2)) pi C`.
    pub phi2: f64,
    /// `pi C` with the exact effective ratio.
    pub cap: f64,
    pub gbar: f64,
    pub regime: Regime,
}

/// Evaluates the diagram with the chosen treatment of the green ratio.
///
/// In `Exact` mode `gbar` follows the three-branch piecewise form; in
/// `Nominal` mode it is `min(phi1, pi C, phi2)` with the exact cap.
pub fn mfd_point(
    fd: &FundamentalDiagram,
    plan: &SignalPlan,
    ring: &RingConfig,
    mode: PiMode,
) -> Result<MfdPoint> {
    let ratio = mode.ratio(plan);
    let crit = critical_densities_with_ratio(fd, ring, plan.cycle(), ratio)?;
    let (k1, k2) = (crit.k1, crit.k2);
    let k0 = ring.density();
    let jam = fd.jam_density();
    let scaled_cap = ratio * fd.capacity();
    let phi1 = (k0 / k1) * scaled_cap;
    let phi2 = ((jam - k0) / (jam - k2)) * scaled_cap;
    let cap = plan.ratio() * fd.capacity();
    let gbar = match mode {
        PiMode::Exact => {
            if k0 < k1 {
                phi1
            } else if k0 <= k2 {
                cap
            } else {
                phi2
            }
        }
        PiMode::Nominal => phi1.min(cap).min(phi2),
    };
    Ok(MfdPoint {
        density: k0,
        cycle: plan.cycle(),
        ratio,
        k1,
        k2,
        phi1,
        phi2,
        cap,
        gbar,
        regime: Regime::classify(fd, plan.ratio(), k0),
    })
}

/// Stationary average flow-rate for the plan's exact green ratio.
pub fn mfd_gbar(fd: &FundamentalDiagram, plan: &SignalPlan, ring: &RingConfig) -> Result<MfdPoint> {
    mfd_point(fd, plan, ring, PiMode::Exact)
}

fn phi_at_cycle(
    fd: &FundamentalDiagram,
    plan: &SignalPlan,
    ring: &RingConfig,
    cycle: f64,
    mode: PiMode,
) -> Result<MfdPoint> {
    if !(cycle.is_finite() && cycle > 0.0) {
        return domain(format!("cycle length must be positive, got {cycle}"));
    }
    let plan = match mode {
        PiMode::Exact => plan.with_cycle(cycle)?,
        // the nominal ratio does not depend on the lost time
        PiMode::Nominal => SignalPlan::without_lost_time(cycle, plan.green_share())?,
    };
    mfd_point(fd, &plan, ring, mode)
}

/// Forward-wave branch `phi1` as a function of the cycle length, keeping the
/// plan's lost time and green allocation.
pub fn phi1_of_cycle(
    fd: &FundamentalDiagram,
    plan: &SignalPlan,
    ring: &RingConfig,
    cycle: f64,
    mode: PiMode,
) -> Result<f64> {
    Ok(phi_at_cycle(fd, plan, ring, cycle, mode)?.phi1)
}

/// Backward-wave branch `phi2` as a function of the cycle length.
pub fn phi2_of_cycle(
    fd: &FundamentalDiagram,
    plan: &SignalPlan,
    ring: &RingConfig,
    cycle: f64,
    mode: PiMode,
) -> Result<f64> {
    Ok(phi_at_cycle(fd, plan, ring, cycle, mode)?.phi2)
}

/// Evaluates the stationary-state balance over the last complete cycle `i`
/// of a simulated series:
///
/// `min{G(iT + pi T - L/V) + k0 L, G(iT + pi T - L/W) + (K - k0) L,
///      G(iT) + pi T C} - (G(iT) + gbar T)`.
///
/// The delayed arguments are written as `(i - j) T + (pi - alpha) T` with the
/// wave decompositions.
pub fn main_equation_residual(series: &CumulativeFlowSeries, gbar: f64) -> Result<f64> {
    let scenario = series.scenario();
    let (fd, plan, ring) = (&scenario.fd, &scenario.plan, &scenario.ring);
    let cycle = plan.cycle();
    let ratio = plan.ratio();
    let complete = (series.duration() / cycle + 1e-9).floor();
    if complete < 1.0 {
        return sequencing("series does not contain a complete cycle");
    }
    let i = complete - 1.0;
    let forward = decompose(ring.forward_lag(fd), cycle)?;
    let backward = decompose(ring.backward_lag(fd), cycle)?;
    let at = |w: &WaveDecomposition| {
        let t = (i - w.modulus as f64) * cycle + (ratio - w.remainder) * cycle;
        if t < 0.0 {
            return sequencing(format!("lookup at {t} s precedes the series"));
        }
        series.value_at(t)
    };
    let start = series.value_at(i * cycle)?;
    let lhs = (at(&forward)? + ring.vehicles())
        .min(at(&backward)? + ring.vacancies(fd))
        .min(start + ratio * cycle * fd.capacity());
    Ok(lhs - (start + gbar * cycle))
}
