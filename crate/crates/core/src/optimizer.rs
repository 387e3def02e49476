//! Cycle-length design under start-up lost time.
//!
//! With lost time `delta` per phase the usable green ratio is
//! `(1 - 2 delta / T) pi0`, so long cycles raise the capacity cap while the
//! wave branches `phi1`, `phi2` generally fall with `T`. The optimum depends
//! on the congestion level `chi`, the ratio of stationary demand to supply.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::fundamentals::{FundamentalDiagram, RingConfig, SignalPlan};
use crate::mfd::{mfd_point, PiMode};
use crate::par::{self, Jobs};

/// Relative rounding allowance in the feasibility test of wave-aligned
/// cycle lengths.
const FEASIBILITY_SLACK: f64 = 1e-12;

/// Congestion classes by `chi`: `[0, pi0)`, `[pi0, 1)`, `{1}`,
/// `(1, 1/pi0]`, `(1/pi0, inf]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CongestionRegime {
    VerySparse,
    Sparse,
    Critical,
    Dense,
    VeryDense,
}

impl CongestionRegime {
    pub fn classify(chi: f64, green_share: f64) -> Self {
        if (chi - 1.0).abs() <= 1e-12 {
            CongestionRegime::Critical
        } else if chi < green_share {
            CongestionRegime::VerySparse
        } else if chi < 1.0 {
            CongestionRegime::Sparse
        } else if chi <= 1.0 / green_share {
            CongestionRegime::Dense
        } else {
            CongestionRegime::VeryDense
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CongestionRegime::VerySparse => "very-sparse",
            CongestionRegime::Sparse => "sparse",
            CongestionRegime::Critical => "critical",
            CongestionRegime::Dense => "dense",
            CongestionRegime::VeryDense => "very-dense",
        }
    }
}

impl fmt::Display for CongestionRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `chi = min(V k0, C) / min(C, (K - k0) W)`; infinite at jam density.
pub fn congestion_level(fd: &FundamentalDiagram, ring: &RingConfig) -> f64 {
    let k0 = ring.density();
    let demand = (fd.free_flow_speed() * k0).min(fd.capacity());
    let supply = fd.capacity().min((fd.jam_density() - k0) * fd.wave_speed());
    if supply <= 0.0 {
        f64::INFINITY
    } else {
        demand / supply
    }
}

/// Settings that the closed forms leave open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    /// Cycle length at which the unbounded optimum of critical traffic is
    /// evaluated (s).
    pub cycle_cap: f64,
    /// Relative shortfall from the optimum still reported as near-optimal.
    pub near_gap: f64,
    /// Largest `j` enumerated for `L / (j V)` or `L / (j W)`.
    pub max_multiple: u32,
    /// Green ratio treatment inside `phi1`, `phi2`.
    pub mode: PiMode,
    /// Grid step for the numerical fallback (s).
    pub search_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            cycle_cap: 600.0,
            near_gap: 0.05,
            max_multiple: 64,
            mode: PiMode::Nominal,
            search_step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CycleOptimum {
    /// One or more optimal cycle lengths (s), increasing.
    Finite(Vec<f64>),
    /// The average flow-rate keeps growing with `T`; evaluated at `cap`.
    Unbounded { cap: f64 },
}

/// How the reported optimum was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimumSource {
    ClosedForm,
    /// No wave-aligned cycle length is feasible; a fine grid search over the
    /// same objective was used.
    GridSearch,
    /// The intersection with the last decreasing wave branch does not exist;
    /// the objective is flat from the reported cycle length onward.
    PlateauStart,
}

impl OptimumSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimumSource::ClosedForm => "closed-form",
            OptimumSource::GridSearch => "grid-search",
            OptimumSource::PlateauStart => "plateau-start",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearOptimal {
    pub cycle: f64,
    pub gbar: f64,
    /// `1 - gbar / gbar_star`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalCycleResult {
    pub chi: f64,
    pub regime: CongestionRegime,
    pub optimum: CycleOptimum,
    pub gbar_star: f64,
    pub source: OptimumSource,
    pub near_optimal: Vec<NearOptimal>,
}

impl OptimalCycleResult {
    pub fn cycles(&self) -> &[f64] {
        match &self.optimum {
            CycleOptimum::Finite(c) => c,
            CycleOptimum::Unbounded { .. } => &[],
        }
    }
}

fn check_signal(lost_time: f64, green_share: f64) -> Result<()> {
    if !(lost_time.is_finite() && lost_time >= 0.0) {
        return domain(format!("lost time must be nonnegative, got {lost_time}"));
    }
    if !(green_share > 0.0 && green_share < 1.0) {
        return domain(format!("green share must lie in (0, 1), got {green_share}"));
    }
    Ok(())
}

/// Design objective `min(phi1, (1 - 2 delta / T) pi0 C, phi2)` at cycle `T`.
pub fn objective(
    fd: &FundamentalDiagram,
    ring: &RingConfig,
    lost_time: f64,
    green_share: f64,
    cycle: f64,
    mode: PiMode,
) -> Result<f64> {
    let plan = SignalPlan::new(cycle, lost_time, green_share)?;
    let point = mfd_point(fd, &plan, ring, mode)?;
    Ok(point.phi1.min(point.cap).min(point.phi2))
}

/// Wave-aligned cycle lengths `lag / j` that keep `rate` below the lost-time
/// reduced cap.
fn wave_aligned_optima(
    fd: &FundamentalDiagram,
    lag: f64,
    rate: f64,
    lost_time: f64,
    green_share: f64,
    max_multiple: u32,
) -> Vec<f64> {
    let mut out = Vec::new();
    for j in 1..=max_multiple {
        let cycle = lag / f64::from(j);
        if cycle <= 2.0 * lost_time {
            break;
        }
        let cap = (1.0 - 2.0 * lost_time / cycle) * green_share * fd.capacity();
        if rate <= cap * (1.0 + FEASIBILITY_SLACK) {
            out.push(cycle);
        } else {
            // the cap only shrinks for larger j
            break;
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Optimal cycle lengths for the given density, lost time and green share.
pub fn optimal_cycle(
    fd: &FundamentalDiagram,
    ring: &RingConfig,
    lost_time: f64,
    green_share: f64,
    settings: &OptimizerSettings,
) -> Result<OptimalCycleResult> {
    check_signal(lost_time, green_share)?;
    if !(settings.cycle_cap > 2.0 * lost_time) {
        return config(format!(
            "cycle cap {} must exceed twice the lost time",
            settings.cycle_cap
        ));
    }
    let chi = congestion_level(fd, ring);
    let regime = CongestionRegime::classify(chi, green_share);
    let k0 = ring.density();
    let l = ring.length();
    let eval = |cycle: f64| objective(fd, ring, lost_time, green_share, cycle, settings.mode);

    let mut source = OptimumSource::ClosedForm;
    let (optimum, gbar_star) = match regime {
        CongestionRegime::VerySparse | CongestionRegime::VeryDense => {
            let (lag, rate) = if regime == CongestionRegime::VerySparse {
                (ring.forward_lag(fd), fd.free_flow_speed() * k0)
            } else {
                (ring.backward_lag(fd), (fd.jam_density() - k0) * fd.wave_speed())
            };
            let cycles =
                wave_aligned_optima(fd, lag, rate, lost_time, green_share, settings.max_multiple);
            if cycles.is_empty() {
                source = OptimumSource::GridSearch;
                let grid = search_grid(lost_time, settings.cycle_cap, settings.search_step);
                let sweep = sweep_optimum(
                    fd,
                    ring,
                    lost_time,
                    green_share,
                    &grid,
                    settings.mode,
                    Jobs::SEQUENTIAL,
                )?;
                (CycleOptimum::Finite(vec![sweep.best_cycle]), sweep.best_gbar)
            } else {
                (CycleOptimum::Finite(cycles), rate)
            }
        }
        CongestionRegime::Sparse | CongestionRegime::Dense => {
            let (share, speed) = if regime == CongestionRegime::Sparse {
                (chi, fd.free_flow_speed())
            } else {
                (1.0 / chi, fd.wave_speed())
            };
            let branch_end = l / (green_share * speed);
            let mut cycle = share * branch_end + 2.0 * lost_time;
            if cycle > branch_end * (1.0 + FEASIBILITY_SLACK) {
                // past the last decreasing branch the wave bound is flat at
                // share * pi0 C and the cap reaches it at 2 delta / (1 - share)
                cycle = 2.0 * lost_time / (1.0 - share);
                source = OptimumSource::PlateauStart;
            }
            (CycleOptimum::Finite(vec![cycle]), eval(cycle)?)
        }
        CongestionRegime::Critical => {
            let cap = settings.cycle_cap;
            let gbar = (1.0 - 2.0 * lost_time / cap) * green_share * fd.capacity();
            (CycleOptimum::Unbounded { cap }, gbar)
        }
    };

    let mut near_optimal = Vec::new();
    if gbar_star > 0.0 {
        let mut candidates: Vec<f64> = (1..=8)
            .flat_map(|j| {
                let j = f64::from(j);
                [ring.forward_lag(fd) / j, ring.backward_lag(fd) / j]
            })
            .filter(|&c| c > 2.0 * lost_time)
            .collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
        for cycle in candidates {
            let gbar = eval(cycle)?;
            let gap = 1.0 - gbar / gbar_star;
            if gap <= settings.near_gap {
                near_optimal.push(NearOptimal { cycle, gbar, gap });
            }
        }
    }

    Ok(OptimalCycleResult { chi, regime, optimum, gbar_star, source, near_optimal })
}

fn search_grid(lost_time: f64, cap: f64, step: f64) -> Vec<f64> {
    let start = 2.0 * lost_time;
    let n = ((cap - start) / step).floor() as usize;
    (1..=n).map(|i| start + i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleSweep {
    pub best_cycle: f64,
    pub best_gbar: f64,
    /// `(T, gbar)` for every grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Values closer than this relative gap count as ties in [`sweep_optimum`].
const TIE_SLACK: f64 = 1e-12;

/// Brute-force maximization of [`objective`] over a strictly increasing grid
/// of cycle lengths. Ties, up to rounding, go to the smaller cycle.
pub fn sweep_optimum(
    fd: &FundamentalDiagram,
    ring: &RingConfig,
    lost_time: f64,
    green_share: f64,
    grid: &[f64],
    mode: PiMode,
    jobs: Jobs,
) -> Result<CycleSweep> {
    check_signal(lost_time, green_share)?;
    if grid.is_empty() {
        return config("cycle grid is empty");
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return config("cycle grid must be strictly increasing");
    }
    if grid[0] <= 2.0 * lost_time {
        return config(format!(
            "cycle grid starts at {} s, not above twice the lost time",
            grid[0]
        ));
    }
    let values = par::map(grid, jobs, |&cycle| {
        objective(fd, ring, lost_time, green_share, cycle, mode)
    });
    let mut curve = Vec::with_capacity(grid.len());
    let (mut best_cycle, mut best_gbar) = (grid[0], f64::NEG_INFINITY);
    for (&cycle, value) in grid.iter().zip(values) {
        let gbar = value?;
        if curve.is_empty() || gbar > best_gbar + TIE_SLACK * best_gbar.abs() {
            best_cycle = cycle;
            best_gbar = gbar;
        }
        curve.push((cycle, gbar));
    }
    Ok(CycleSweep { best_cycle, best_gbar, curve })
}

/// Total travel time of a stationary state, `(k0 L)^2 / gbar` (veh s).
/// Zero for an empty ring, infinite when nothing moves on an occupied ring.
pub fn stationary_delay(
    _fd: &FundamentalDiagram,
    _plan: &SignalPlan,
    ring: &RingConfig,
    gbar: f64,
) -> Result<f64> {
    if !(gbar >= 0.0) {
        return domain(format!("average flow-rate must be nonnegative, got {gbar}"));
    }
    let vehicles = ring.vehicles();
    if vehicles == 0.0 {
        return Ok(0.0);
    }
    if gbar == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(vehicles * vehicles / gbar)
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: f64 = 1.0 / 7.0;
    const KBAR: f64 = 1.0 / 35.0;
    const C: f64 = 4.0 / 7.0;

    fn fd() -> FundamentalDiagram {
        FundamentalDiagram::new(20.0, 5.0, K).unwrap()
    }

    fn ring(density: f64) -> RingConfig {
        RingConfig::new(1200.0, density, &fd()).unwrap()
    }

    fn integer_grid(lo: u32, hi: u32) -> Vec<f64> {
        (lo..=hi).map(f64::from).collect()
    }

    #[test]
    fn congestion_levels() {
        assert!((congestion_level(&fd(), &ring(KBAR)) - 1.0).abs() < 1e-15);
        assert!((congestion_level(&fd(), &ring(KBAR / 1.5)) - 2.0 / 3.0).abs() < 1e-14);
        assert!((congestion_level(&fd(), &ring(2.0 * KBAR)) - 4.0 / 3.0).abs() < 1e-14);
        assert_eq!(congestion_level(&fd(), &ring(0.0)), 0.0);
        assert_eq!(congestion_level(&fd(), &ring(K)), f64::INFINITY);
    }

    #[test]
    fn sparse_optimum() {
        let r = optimal_cycle(&fd(), &ring(KBAR / 1.5), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(r.regime, CongestionRegime::Sparse);
        assert!((r.cycles()[0] - 86.0).abs() < 1e-9);
        assert!((r.gbar_star / (0.5 * C) - (1.0 - 6.0 / 86.0)).abs() < 1e-12);
        assert!((r.gbar_star / (0.5 * C) - 0.93).abs() < 0.005);
        assert!(r.near_optimal.iter().any(|n| n.cycle == 60.0 && (n.gap - 0.0325).abs() < 1e-3));
    }

    #[test]
    fn dense_optimum() {
        let r = optimal_cycle(&fd(), &ring(2.0 * KBAR), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(r.regime, CongestionRegime::Dense);
        assert!((r.cycles()[0] - 366.0).abs() < 1e-9);
        assert!((r.gbar_star / (0.5 * C) - 0.98).abs() < 0.005);
        assert!(r.near_optimal.iter().any(|n| n.cycle == 120.0));
        assert!(!r.near_optimal.iter().any(|n| n.cycle == 480.0));
    }

    #[test]
    fn near_critical_optimum_starts_plateau() {
        let k0 = 0.972 * KBAR;
        let r = optimal_cycle(&fd(), &ring(k0), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(r.regime, CongestionRegime::Sparse);
        assert_eq!(r.source, OptimumSource::PlateauStart);
        assert!((r.cycles()[0] - 6.0 / 0.028).abs() < 1e-6);
        assert!((r.gbar_star - 0.972 * 0.5 * C).abs() < 1e-12);
        let dense = optimal_cycle(&fd(), &ring(1.002 * KBAR), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(dense.regime, CongestionRegime::Dense);
        assert_eq!(dense.source, OptimumSource::PlateauStart);
        // at chi = 0.95 both forms meet at L / (pi0 V) = 120 s
        let edge = optimal_cycle(&fd(), &ring(0.94 * KBAR), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(edge.source, OptimumSource::ClosedForm);
        assert!((edge.cycles()[0] - (0.94 * 120.0 + 6.0)).abs() < 1e-9);
    }

    #[test]
    fn critical_is_unbounded() {
        let r = optimal_cycle(&fd(), &ring(KBAR), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(r.regime, CongestionRegime::Critical);
        assert_eq!(r.optimum, CycleOptimum::Unbounded { cap: 600.0 });
        assert!((r.gbar_star - 0.99 * 0.5 * C).abs() < 1e-12);
    }

    #[test]
    fn very_sparse_has_multiple_optima() {
        let r = optimal_cycle(&fd(), &ring(0.25 * KBAR), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(r.regime, CongestionRegime::VerySparse);
        assert_eq!(r.cycles(), &[12.0, 15.0, 20.0, 30.0, 60.0]);
        assert!((r.gbar_star - 0.25 * C).abs() < 1e-15);
    }

    #[test]
    fn very_dense_has_multiple_optima() {
        let r = optimal_cycle(&fd(), &ring(4.0 * KBAR), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(r.regime, CongestionRegime::VeryDense);
        // (K - k0) W = C / 4 needs (1 - 6 / T) / 2 >= 1 / 4, i.e. T >= 12
        assert_eq!(r.cycles(), &[12.0, 240.0 / 19.0, 240.0 / 18.0, 240.0 / 17.0, 15.0, 16.0, 240.0 / 14.0, 240.0 / 13.0, 20.0, 240.0 / 11.0, 24.0, 240.0 / 9.0, 30.0, 240.0 / 7.0, 40.0, 48.0, 60.0, 80.0, 120.0, 240.0][..]);
    }

    #[test]
    fn infeasible_wave_cycles_fall_back_to_search() {
        // k0 just under pi0 Kbar: V k0 exceeds the lost-time cap at T = L/V
        let r = optimal_cycle(&fd(), &ring(0.49 * KBAR), 3.0, 0.5, &Default::default()).unwrap();
        assert_eq!(r.regime, CongestionRegime::VerySparse);
        assert_eq!(r.source, OptimumSource::GridSearch);
        assert_eq!(r.cycles().len(), 1);
        let at = objective(&fd(), &ring(0.49 * KBAR), 3.0, 0.5, r.cycles()[0], PiMode::Nominal)
            .unwrap();
        assert_eq!(at, r.gbar_star);
    }

    #[test]
    fn sweep_finds_closed_form() {
        let grid = integer_grid(7, 600);
        let s = sweep_optimum(&fd(), &ring(KBAR / 1.5), 3.0, 0.5, &grid, PiMode::Nominal, Jobs::SEQUENTIAL)
            .unwrap();
        assert_eq!(s.best_cycle, 86.0);
        let at120 = s.curve.iter().find(|(c, _)| *c == 120.0).unwrap().1;
        assert!((at120 / (0.5 * C) - 2.0 / 3.0).abs() < 1e-12);
        assert!((1.0 - at120 / s.best_gbar - 0.28).abs() < 0.01);
    }

    #[test]
    fn sweep_of_empty_ring() {
        let grid = integer_grid(10, 100);
        let s = sweep_optimum(&fd(), &ring(0.0), 3.0, 0.5, &grid, PiMode::Exact, Jobs::default()).unwrap();
        assert_eq!(s.best_cycle, 10.0);
        assert!(s.curve.iter().all(|&(_, g)| g == 0.0));
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let f = fd();
        let r = ring(0.01);
        let e = |g: &[f64]| sweep_optimum(&f, &r, 3.0, 0.5, g, PiMode::Exact, Jobs::SEQUENTIAL);
        assert!(matches!(e(&[]), Err(crate::Error::Config(_))));
        assert!(matches!(e(&[10.0, 10.0]), Err(crate::Error::Config(_))));
        assert!(matches!(e(&[6.0, 10.0]), Err(crate::Error::Config(_))));
    }

    #[test]
    fn delay_examples() {
        let f = fd();
        let plan = SignalPlan::new(86.0, 3.0, 0.5).unwrap();
        assert_eq!(stationary_delay(&f, &plan, &ring(0.0), 0.0).unwrap(), 0.0);
        let unit = RingConfig::new(1200.0, 1.0 / 1200.0, &f).unwrap();
        let g = plan.ratio() * C;
        assert!((stationary_delay(&f, &plan, &unit, g).unwrap() - 1.0 / g).abs() < 1e-12);
        let d = stationary_delay(&f, &plan, &ring(KBAR / 1.5), 0.93 * 0.5 * C).unwrap();
        assert!((d - 1966.0).abs() < 1.0);
        assert_eq!(stationary_delay(&f, &plan, &ring(0.01), 0.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn lost_time_monotonicity_of_closed_forms() {
        // sparse: dT*/dchi > 0, dT*/ddelta > 0; dense: dT*/dchi < 0
        let f = fd();
        let s = OptimizerSettings::default();
        let t = |k0: f64, lost: f64| optimal_cycle(&f, &ring(k0), lost, 0.5, &s).unwrap().cycles()[0];
        let h = 1e-5;
        for k0 in [0.55 * KBAR, 0.7 * KBAR, 0.9 * KBAR] {
            assert!(t(k0 + h * KBAR, 3.0) > t(k0, 3.0));
            assert!(t(k0, 3.0 + 1e-3) > t(k0, 3.0));
        }
        for k0 in [1.2 * KBAR, 2.0 * KBAR, 2.9 * KBAR] {
            // higher density means higher chi in the dense range
            assert!(t(k0 + h * KBAR, 3.0) < t(k0, 3.0));
            assert!(t(k0, 3.0 + 1e-3) > t(k0, 3.0));
        }
    }
}
