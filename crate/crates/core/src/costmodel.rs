//! Analytic runtime model of the pipeline: the coefficient table, the
//! four-term total-time expression, per-stage work formulas, optimal box
//! population, bottleneck-coverage thresholds, and a P-process timeline
//! simulator for the overlap strategy.
//!
//! The coefficient table is authoritative as published; recombining the
//! per-stage work formulas yields slightly different low-order constants,
//! and no reconciliation is attempted at the coefficient level. Only the
//! initialization and direct-evaluation work formulas are itemized enough
//! to be checked against instrumented counts.

use crate::{rf, ExecMode, FmmError, Real};

/// Machine abstraction: a flop rate and a process count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MachineModel<T> {
    pub flop_rate: T,
    pub process_count: u64,
}

impl<T: Real> MachineModel<T> {
    pub fn new(flop_rate: T, process_count: u64) -> Result<Self, FmmError> {
        if !(flop_rate.is_finite() && flop_rate > T::zero()) {
            return Err(FmmError::InvalidConfig {
                message: format!("flop rate must be positive and finite, got {flop_rate:?}"),
            });
        }
        if process_count < 1 {
            return Err(FmmError::InvalidConfig {
                message: "process count must be at least 1".into(),
            });
        }
        Ok(Self {
            flop_rate,
            process_count,
        })
    }

    /// Unit flop rate, one process: the normalization used for coefficient
    /// tables quoted in seconds-per-flop-count form.
    pub fn unit() -> Self {
        Self {
            flop_rate: T::one(),
            process_count: 1,
        }
    }
}

/// Coefficients of `T = aN/P + b log₄P + cN/(BP) + dNB/P` for a given
/// expansion order. Fields are public so externally published constants
/// can be compared through the same machinery.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostCoefficients<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub order: usize,
}

/// Continuous base-4 logarithm; the model never floors it.
pub fn log4<T: Real>(x: T) -> T {
    x.log2() / rf::<T>(2.0)
}

/// Coefficient table in terms of order `t` and flop rate `r`:
/// `a = (16t-15)/r`, `b = (84-48t+571t²)/3r`,
/// `c = (128-48t+844t²)/3r`, `d = 198/r`.
pub fn coefficients<T: Real>(
    t: usize,
    machine: &MachineModel<T>,
) -> Result<CostCoefficients<T>, FmmError> {
    if t < 1 {
        return Err(FmmError::InvalidConfig {
            message: "expansion order must be at least 1".into(),
        });
    }
    let ti = t as i64;
    let r = machine.flop_rate;
    let three = rf::<T>(3.0);
    let int = |v: i64| T::from_i64(v).expect("coefficient numerator fits the scalar");
    Ok(CostCoefficients {
        a: int(16 * ti - 15) / r,
        b: int(84 - 48 * ti + 571 * ti * ti) / (three * r),
        c: int(128 - 48 * ti + 844 * ti * ti) / (three * r),
        d: int(198) / r,
        order: t,
    })
}

/// Four-term runtime `aN/P + b log₄P + cN/(BP) + dNB/P`; lower-order
/// terms are deliberately omitted.
pub fn total_time<T: Real>(n: u64, p: u64, b: T, coeffs: &CostCoefficients<T>) -> T {
    let n = T::from_u64(n).unwrap();
    let p = T::from_u64(p).unwrap();
    coeffs.a * n / p + coeffs.b * log4(p) + coeffs.c * n / (b * p) + coeffs.d * n * b / p
}

/// Argmin of the B-dependent part `c/B + dB`: `B_opt = √(c/d)`.
pub fn optimal_b<T: Real>(coeffs: &CostCoefficients<T>) -> T {
    (coeffs.c / coeffs.d).sqrt()
}

/// Box population needed for the direct-evaluation pool to cover the
/// reduction bottleneck: `(b/d) · P · L_root / N`.
pub fn min_b_cover<T: Real>(n: u64, p: u64, l_root: T, coeffs: &CostCoefficients<T>) -> T {
    let n = T::from_u64(n).unwrap();
    let p = T::from_u64(p).unwrap();
    (coeffs.b / coeffs.d) * p * l_root / n
}

/// [`min_b_cover`] with the customary root-tree depth `L_root = log₄P`.
pub fn min_b_cover_default<T: Real>(n: u64, p: u64, coeffs: &CostCoefficients<T>) -> T {
    min_b_cover(n, p, log4(T::from_u64(p).unwrap()), coeffs)
}

/// Minimum particles per process for coverage at fixed B:
/// `M = (b/d) · log₄P / B`.
pub fn min_particles_per_process<T: Real>(p: u64, b: T, coeffs: &CostCoefficients<T>) -> T {
    (coeffs.b / coeffs.d) * log4(T::from_u64(p).unwrap()) / b
}

/// The memory-scalability curve: `(P, (b/d)·log₄P/B)` per requested P.
/// The ratio b/d is flop-rate independent, so no machine is needed.
pub fn sweep_min_size<T: Real>(
    p_values: &[u64],
    b: T,
    t: usize,
) -> Result<Vec<(u64, T)>, FmmError> {
    if !(b > T::zero()) {
        return Err(FmmError::InvalidConfig {
            message: "box population must be positive".into(),
        });
    }
    let coeffs = coefficients(t, &MachineModel::<T>::unit())?;
    p_values
        .iter()
        .map(|&p| {
            if p < 1 {
                return Err(FmmError::InvalidConfig {
                    message: "process counts must be at least 1".into(),
                });
            }
            Ok((p, min_particles_per_process(p, b, &coeffs)))
        })
        .collect()
}

/// Multipole initialization work: `2 + (8t+3)N` flops.
pub fn work_init(n: u64, t: u32) -> u64 {
    2 + (8 * t as u64 + 3) * n
}

/// Per-parent M2M cost `c₁ = 4(2 + 2t² + 4t(t-1))`.
pub fn m2m_cell_cost(t: u32) -> u64 {
    assert!(t >= 1, "expansion order must be at least 1");
    let t = t as u64;
    4 * (2 + 2 * t * t + 4 * t * (t - 1))
}

/// Upward-sweep translation work `Σ_{l=2}^{L-1} 4^l · c₁`.
pub fn work_up(levels: u32, t: u32) -> u64 {
    (2..levels).map(|l| (1u64 << (2 * l)) * m2m_cell_cost(t)).sum()
}

/// Multipole-to-local work with the maximum list size 27 charged to every
/// cell: `Σ_{l=2}^{L} 4^l · 27(2 + 2t² + 15t²)`.
pub fn work_m2l(levels: u32, t: u32) -> u64 {
    let t = t as u64;
    let per_cell = 27 * (2 + 17 * t * t);
    (2..=levels).map(|l| (1u64 << (2 * l)) * per_cell).sum()
}

/// Local-to-local work `Σ_{l=3}^{L} 4^l · 4(2 + 2t² + 8t²)`.
pub fn work_l2l(levels: u32, t: u32) -> u64 {
    let t = t as u64;
    let per_cell = 4 * (2 + 10 * t * t);
    (3..=levels).map(|l| (1u64 << (2 * l)) * per_cell).sum()
}

/// Near-field work by box class, 22 flops per evaluation and both ends of
/// every pair:
/// `22·(4(4B²-B) + (2^(L+2)-8)(6B²-B) + (4^L-2^(L+2)+4)(9B²-B))`.
pub fn work_direct<T: Real>(levels: u32, b: T) -> T {
    let corners = rf::<T>(4.0);
    let edges = T::from_u64((1 << (levels + 2)) - 8).unwrap();
    let interior = T::from_u64((1u64 << (2 * levels)) - (1 << (levels + 2)) + 4).unwrap();
    let b2 = b * b;
    let (four, six, nine) = (rf::<T>(4.0), rf::<T>(6.0), rf::<T>(9.0));
    rf::<T>(22.0)
        * (corners * (four * b2 - b) + edges * (six * b2 - b) + interior * (nine * b2 - b))
}

/// One sweep level in the simulated timeline. `idle` is in
/// process-seconds and reflects the schedule before any direct work is
/// pulled in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelPhase<T> {
    pub level: u32,
    pub duration: T,
    pub idle: T,
}

/// Simulated P-process timeline of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TimelineReport<T> {
    pub mode: ExecMode,
    pub levels: u32,
    /// Wall time of the perfectly parallel initialization, `aN/P`.
    pub init_duration: T,
    pub level_phases: Vec<LevelPhase<T>>,
    /// Total structural idle during the sweep, process-seconds.
    pub sweep_idle: T,
    /// Direct-evaluation work available to fill idle, process-seconds.
    pub direct_pool: T,
    /// Portion of `sweep_idle` actually filled (zero in sequential mode).
    pub absorbed_idle: T,
    /// Wall time of direct work that did not hide inside the sweep.
    pub direct_tail: T,
    pub makespan: T,
    pub bottleneck_covered: bool,
    pub utilization: T,
}

/// Plays the schedule forward level by level. Each tree level from the
/// root costs one per-cell unit of `b` seconds, `max(4^l/P, 1)·b` wall
/// time; levels with fewer cells than processes leave `(P - 4^l)·b` of
/// idle capacity. Direct evaluation contributes a pool of `d·N·B`
/// process-seconds which either runs after the sweeps (sequential) or
/// soaks up the idle capacity (overlapped). The coverage verdict — pool
/// at least as large as idle — is a property of the instance and is
/// reported identically in both modes.
pub fn timeline_simulate<T: Real>(
    n: u64,
    b: T,
    t: usize,
    machine: &MachineModel<T>,
    mode: ExecMode,
) -> Result<TimelineReport<T>, FmmError> {
    if n < 1 {
        return Err(FmmError::InvalidConfig {
            message: "particle count must be at least 1".into(),
        });
    }
    if !(b > T::zero() && b.is_finite()) {
        return Err(FmmError::InvalidConfig {
            message: "box population must be positive and finite".into(),
        });
    }
    let coeffs = coefficients(t, machine)?;
    let p = machine.process_count;
    let pt = T::from_u64(p).unwrap();
    let nt = T::from_u64(n).unwrap();

    // 4^L = N/B, rounded to the nearest whole level, at least 2.
    let levels = log4(nt / b)
        .round()
        .to_u32()
        .map_or(2, |l| l.max(2));

    let mut level_phases = Vec::with_capacity(levels as usize + 1);
    let mut sweep_wall = T::zero();
    let mut sweep_busy = T::zero();
    let mut sweep_idle = T::zero();
    let mut cells = T::one();
    for level in 0..=levels {
        let duration = (cells / pt).max(T::one()) * coeffs.b;
        let idle = if cells < pt {
            (pt - cells) * coeffs.b
        } else {
            T::zero()
        };
        sweep_wall += duration;
        sweep_busy += cells * coeffs.b;
        sweep_idle += idle;
        level_phases.push(LevelPhase {
            level,
            duration,
            idle,
        });
        cells = cells * rf::<T>(4.0);
    }

    let init_duration = coeffs.a * nt / pt;
    let direct_pool = coeffs.d * nt * b;
    let bottleneck_covered = direct_pool >= sweep_idle;

    let (absorbed_idle, direct_tail) = match mode {
        ExecMode::Sequential => (T::zero(), direct_pool / pt),
        ExecMode::Overlapped => {
            let absorbed = direct_pool.min(sweep_idle);
            (absorbed, (direct_pool - absorbed) / pt)
        }
    };
    let makespan = init_duration + sweep_wall + direct_tail;
    let busy = coeffs.a * nt + sweep_busy + direct_pool;
    let utilization = busy / (pt * makespan);

    Ok(TimelineReport {
        mode,
        levels,
        init_duration,
        level_phases,
        sweep_idle,
        direct_pool,
        absorbed_idle,
        direct_tail,
        makespan,
        bottleneck_covered,
        utilization,
    })
}
