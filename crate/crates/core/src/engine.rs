//! The ten-stage pipeline: tree setup (1), binning (2), lists (3), P2M (4),
//! M2M up the tree (5), M2L across interaction lists (6), L2L down the tree
//! (7), L2P evaluation (8), near-field direct sums (9), and the final
//! far+near combination (10).
//!
//! With one worker the stages run inline on the calling thread; with more,
//! execution is handed to [`crate::scheduler`]. Both paths drive the same
//! per-box routines in the same per-box order, so velocities are bitwise
//! identical regardless of mode or worker count.

use std::time::Instant;

use crate::costmodel;
use crate::expansion::{ExpansionOps, LocalExpansion, MultipoleExpansion};
use crate::kernel::{self, KernelParams};
use crate::quadtree::{
    bin_particles, build_tree, interaction_lists, neighbor_lists, Binning, BoxId,
    InteractionLists, NeighborLists, Particle, Quadtree,
};
use crate::scheduler::{self, ExecutionTrace};
use crate::{Complex, ExecMode, FmmError, Real, Velocity};

/// Run parameters. `sigma = None` picks one tenth of the finest box width.
#[derive(Clone, Copy, Debug)]
pub struct FmmConfig<T> {
    pub levels: u32,
    pub order: usize,
    pub sigma: Option<T>,
    pub mode: ExecMode,
    pub workers: usize,
}

impl<T: Real> FmmConfig<T> {
    pub fn new(levels: u32, order: usize) -> Self {
        Self {
            levels,
            order,
            sigma: None,
            mode: ExecMode::Sequential,
            workers: 1,
        }
    }

    pub fn with_sigma(mut self, sigma: T) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Instrumentation for one stage: the flop count implied by the stage's
/// per-task convention, the seconds spent executing its tasks (summed over
/// workers), and how many task instances the stage expands into.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageStats {
    pub flops: u64,
    pub wall_seconds: f64,
    pub tasks: u64,
}

/// Per-stage instrumentation for a completed run, plus the instance
/// dimensions the counts were derived from.
#[derive(Clone, Debug)]
pub struct StageReport {
    /// Index 0 holds stage 1, …, index 9 holds stage 10.
    pub stages: [StageStats; 10],
    pub n: usize,
    pub levels: u32,
    pub order: usize,
    /// Ordered near-field pairs: each unordered pair counts twice.
    pub near_pairs: u64,
    /// Interaction-list entries summed over levels 2..=L.
    pub m2l_entries: u64,
}

impl StageReport {
    /// Stats for a 1-based stage number.
    pub fn stage(&self, number: usize) -> &StageStats {
        assert!((1..=10).contains(&number), "stages are numbered 1..=10");
        &self.stages[number - 1]
    }

    pub fn total_flops(&self) -> u64 {
        self.stages.iter().map(|s| s.flops).sum()
    }

    pub fn total_wall_seconds(&self) -> f64 {
        self.stages.iter().map(|s| s.wall_seconds).sum()
    }
}

/// Everything a run needs after validation: particles, tree, bins, lists,
/// translation tables, and kernel parameters. Immutable during execution.
pub struct Workspace<T: Real> {
    pub(crate) particles: Vec<Particle<T>>,
    pub(crate) tree: Quadtree<T>,
    pub(crate) binning: Binning,
    pub(crate) neighbors: NeighborLists,
    interactions: Vec<InteractionLists>,
    pub(crate) ops: ExpansionOps<T>,
    pub(crate) params: KernelParams<T>,
    config: FmmConfig<T>,
    near_pairs: u64,
    prep_seconds: [f64; 3],
}

impl<T: Real> Workspace<T> {
    pub fn particles(&self) -> &[Particle<T>] {
        &self.particles
    }

    pub fn tree(&self) -> &Quadtree<T> {
        &self.tree
    }

    pub fn config(&self) -> &FmmConfig<T> {
        &self.config
    }

    pub(crate) fn interactions_at(&self, level: u32) -> &InteractionLists {
        &self.interactions[(level - 2) as usize]
    }
}

/// Stages 1–3: build the tree, bin the particles, and assemble neighbor and
/// interaction lists, validating the configuration along the way.
pub fn prepare<T: Real>(
    particles: &[Particle<T>],
    config: FmmConfig<T>,
) -> Result<Workspace<T>, FmmError> {
    if config.workers == 0 {
        return Err(FmmError::InvalidConfig {
            message: "worker count must be at least 1".into(),
        });
    }
    let t0 = Instant::now();
    let tree = build_tree::<T>(config.levels)?;
    let s1 = t0.elapsed().as_secs_f64();

    let ops = ExpansionOps::new(config.order)?;
    let params = match config.sigma {
        Some(sigma) => KernelParams::new(sigma)?,
        None => KernelParams::default_for_box_width(tree.width(config.levels)),
    };

    let t1 = Instant::now();
    let binning = bin_particles(&tree, particles)?;
    let s2 = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let neighbors = neighbor_lists(&tree, config.levels)?;
    let interactions = (2..=config.levels)
        .map(|l| interaction_lists(&tree, l))
        .collect::<Result<Vec<_>, _>>()?;
    let s3 = t2.elapsed().as_secs_f64();

    let near_pairs = kernel::near_pair_count(&tree, &binning)?;
    Ok(Workspace {
        particles: particles.to_vec(),
        tree,
        binning,
        neighbors,
        interactions,
        ops,
        params,
        config,
        near_pairs,
        prep_seconds: [s1, s2, s3],
    })
}

// --- Per-box routines -----------------------------------------------------
//
// The single home of the pipeline arithmetic. The serial path below and the
// scheduler's task bodies both call these with identical inputs and rely on
// their fixed internal summation orders for bitwise reproducibility.

pub(crate) fn p2m_box<T: Real>(
    tree: &Quadtree<T>,
    binning: &Binning,
    particles: &[Particle<T>],
    ops: &ExpansionOps<T>,
    b: BoxId,
) -> MultipoleExpansion<T> {
    let members: Vec<Particle<T>> = binning
        .particles_in(b)
        .iter()
        .map(|&i| particles[i])
        .collect();
    ops.p2m(&members, tree.center(b))
}

pub(crate) fn m2m_box<'a, T: Real + 'a>(
    tree: &Quadtree<T>,
    ops: &ExpansionOps<T>,
    parent: BoxId,
    child_of: impl Fn(BoxId) -> &'a MultipoleExpansion<T>,
) -> MultipoleExpansion<T> {
    let center = tree.center(parent);
    let mut acc = MultipoleExpansion::zero(center, ops.order());
    for child in parent.children() {
        let shifted = ops
            .m2m(child_of(child), center)
            .expect("workspace expansions share one order");
        acc.accumulate(&shifted)
            .expect("shifted child matches parent center and order");
    }
    acc
}

pub(crate) fn m2l_box<'a, T: Real + 'a>(
    tree: &Quadtree<T>,
    ops: &ExpansionOps<T>,
    lists: &InteractionLists,
    b: BoxId,
    mult_of: impl Fn(BoxId) -> &'a MultipoleExpansion<T>,
) -> LocalExpansion<T> {
    let center = tree.center(b);
    let width = tree.width(b.level);
    let mut acc = LocalExpansion::zero(center, ops.order());
    for &partner in lists.partners_of(b) {
        let local = ops
            .m2l(mult_of(partner), center, width)
            .expect("interaction partners are two widths apart");
        acc.accumulate(&local)
            .expect("translated partner matches target center and order");
    }
    acc
}

pub(crate) fn full_local_box<T: Real>(
    tree: &Quadtree<T>,
    ops: &ExpansionOps<T>,
    b: BoxId,
    own_m2l: &LocalExpansion<T>,
    parent_full: &LocalExpansion<T>,
) -> LocalExpansion<T> {
    let translated = ops
        .l2l(parent_full, tree.center(b))
        .expect("workspace expansions share one order");
    let mut full = own_m2l.clone();
    full.accumulate(&translated)
        .expect("translated parent matches child center and order");
    full
}

pub(crate) fn far_box<T: Real>(
    binning: &Binning,
    particles: &[Particle<T>],
    ops: &ExpansionOps<T>,
    b: BoxId,
    local: &LocalExpansion<T>,
    mut write: impl FnMut(usize, Velocity<T>),
) {
    for &i in binning.particles_in(b) {
        write(i, ops.l2p(local, particles[i].position));
    }
}

pub(crate) fn near_box<T: Real>(
    binning: &Binning,
    neighbors: &NeighborLists,
    particles: &[Particle<T>],
    params: KernelParams<T>,
    b: BoxId,
    mut write: impl FnMut(usize, Velocity<T>),
) {
    let own = binning.particles_in(b);
    let neighbor_bins: Vec<&[usize]> = neighbors
        .neighbors_of(b)
        .iter()
        .map(|&nb| binning.particles_in(nb))
        .collect();
    for &i in own {
        write(
            i,
            kernel::near_velocity_single(i, own, &neighbor_bins, particles, params),
        );
    }
}

// --- Reference sweeps -----------------------------------------------------

/// Stages 4–5: P2M at the finest level, then M2M level by level up to 2.
/// Returns expansions indexed `[level][linear]`; levels 0 and 1 stay empty
/// because no interaction list ever reads them.
pub fn upward_sweep<T: Real>(
    tree: &Quadtree<T>,
    binning: &Binning,
    particles: &[Particle<T>],
    order: usize,
) -> Result<Vec<Vec<MultipoleExpansion<T>>>, FmmError> {
    let ops = ExpansionOps::new(order)?;
    let finest = tree.levels();
    let mut levels: Vec<Vec<MultipoleExpansion<T>>> =
        (0..=finest).map(|_| Vec::new()).collect();
    levels[finest as usize] = tree
        .boxes(finest)?
        .into_iter()
        .map(|b| p2m_box(tree, binning, particles, &ops, b))
        .collect();
    for l in (2..finest).rev() {
        let built: Vec<MultipoleExpansion<T>> = tree
            .boxes(l)?
            .into_iter()
            .map(|p| m2m_box(tree, &ops, p, |c| &levels[(l + 1) as usize][c.linear()]))
            .collect();
        levels[l as usize] = built;
    }
    Ok(levels)
}

/// Stages 6–7: M2L sums per level from 2 down to the finest, each level
/// folding in the L2L-translated parent local. Level 2 seeds from zero —
/// coarser levels have no well-separated boxes. Returns the finest-level
/// full locals in linear order.
pub fn downward_sweep<T: Real>(
    tree: &Quadtree<T>,
    multipoles: &[Vec<MultipoleExpansion<T>>],
    interactions: &[InteractionLists],
    order: usize,
) -> Result<Vec<LocalExpansion<T>>, FmmError> {
    let ops = ExpansionOps::new(order)?;
    let finest = tree.levels();
    if multipoles.len() != (finest + 1) as usize {
        return Err(FmmError::LengthMismatch {
            expected: (finest + 1) as usize,
            got: multipoles.len(),
        });
    }
    if interactions.len() != (finest - 1) as usize {
        return Err(FmmError::LengthMismatch {
            expected: (finest - 1) as usize,
            got: interactions.len(),
        });
    }
    let il_at = |level: u32| &interactions[(level - 2) as usize];
    let mut full: Vec<LocalExpansion<T>> = tree
        .boxes(2)?
        .into_iter()
        .map(|b| m2l_box(tree, &ops, il_at(2), b, |p| &multipoles[2][p.linear()]))
        .collect();
    for l in 3..=finest {
        full = tree
            .boxes(l)?
            .into_iter()
            .map(|b| {
                let own = m2l_box(tree, &ops, il_at(l), b, |p| {
                    &multipoles[l as usize][p.linear()]
                });
                let parent = &full[b.parent().expect("levels ≥ 3 have parents").linear()];
                full_local_box(tree, &ops, b, &own, parent)
            })
            .collect();
    }
    Ok(full)
}

/// Stage 10: element-wise `far + near`, always in that operand order.
pub fn combine<T: Real>(
    far: &[Velocity<T>],
    near: &[Velocity<T>],
) -> Result<Vec<Velocity<T>>, FmmError> {
    if far.len() != near.len() {
        return Err(FmmError::LengthMismatch {
            expected: far.len(),
            got: near.len(),
        });
    }
    Ok(far.iter().zip(near).map(|(f, n)| f + n).collect())
}

// --- Pipeline drivers -----------------------------------------------------

/// Runs stages 1–10 and returns per-particle velocities with the stage
/// instrumentation.
pub fn compute_velocities<T: Real>(
    particles: &[Particle<T>],
    config: FmmConfig<T>,
) -> Result<(Vec<Velocity<T>>, StageReport), FmmError> {
    let (velocities, report, _) = compute_velocities_traced(particles, config)?;
    Ok((velocities, report))
}

/// Like [`compute_velocities`], additionally returning the execution trace
/// when the run went through the worker pool (`workers > 1`).
pub fn compute_velocities_traced<T: Real>(
    particles: &[Particle<T>],
    config: FmmConfig<T>,
) -> Result<(Vec<Velocity<T>>, StageReport, Option<ExecutionTrace>), FmmError> {
    let ws = prepare(particles, config)?;
    if config.workers == 1 {
        let (velocities, report) = run_serial(&ws);
        Ok((velocities, report, None))
    } else {
        let graph = scheduler::build_dag(&ws.tree);
        let (velocities, trace) = scheduler::execute(&graph, &ws, config.mode, config.workers)
            .map_err(FmmError::from)?;
        let report = report_from_trace(&ws, &trace);
        Ok((velocities, report, Some(trace)))
    }
}

/// The single-threaded reference path: stages in numeric order, timed one
/// stage at a time.
fn run_serial<T: Real>(ws: &Workspace<T>) -> (Vec<Velocity<T>>, StageReport) {
    let finest = ws.tree.levels();
    let n = ws.particles.len();
    let mut wall = [0f64; 10];
    wall[..3].copy_from_slice(&ws.prep_seconds);
    let boxes_at =
        |l: u32| -> Vec<BoxId> { ws.tree.boxes(l).expect("levels 0..=L are in range") };

    // Stage 4.
    let clock = Instant::now();
    let mut mults: Vec<Vec<MultipoleExpansion<T>>> = (0..=finest).map(|_| Vec::new()).collect();
    mults[finest as usize] = boxes_at(finest)
        .into_iter()
        .map(|b| p2m_box(&ws.tree, &ws.binning, &ws.particles, &ws.ops, b))
        .collect();
    wall[3] = clock.elapsed().as_secs_f64();

    // Stage 5.
    let clock = Instant::now();
    for l in (2..finest).rev() {
        let built: Vec<MultipoleExpansion<T>> = boxes_at(l)
            .into_iter()
            .map(|p| m2m_box(&ws.tree, &ws.ops, p, |c| &mults[(l + 1) as usize][c.linear()]))
            .collect();
        mults[l as usize] = built;
    }
    wall[4] = clock.elapsed().as_secs_f64();

    // Stage 6.
    let clock = Instant::now();
    let mut m2l_locals: Vec<Vec<LocalExpansion<T>>> = (0..=finest).map(|_| Vec::new()).collect();
    for l in 2..=finest {
        m2l_locals[l as usize] = boxes_at(l)
            .into_iter()
            .map(|b| {
                m2l_box(&ws.tree, &ws.ops, ws.interactions_at(l), b, |p| {
                    &mults[l as usize][p.linear()]
                })
            })
            .collect();
    }
    wall[5] = clock.elapsed().as_secs_f64();

    // Stage 7. Full locals level by level; level 2's full local is its M2L
    // sum alone.
    let clock = Instant::now();
    let mut full = m2l_locals[2].clone();
    for l in 3..=finest {
        full = boxes_at(l)
            .into_iter()
            .map(|b| {
                let parent = &full[b.parent().expect("levels ≥ 3 have parents").linear()];
                full_local_box(&ws.tree, &ws.ops, b, &m2l_locals[l as usize][b.linear()], parent)
            })
            .collect();
    }
    wall[6] = clock.elapsed().as_secs_f64();

    // Stage 8.
    let clock = Instant::now();
    let zero = Complex::new(T::zero(), T::zero());
    let mut far = vec![zero; n];
    for b in boxes_at(finest) {
        far_box(&ws.binning, &ws.particles, &ws.ops, b, &full[b.linear()], |i, v| {
            far[i] = v;
        });
    }
    wall[7] = clock.elapsed().as_secs_f64();

    // Stage 9.
    let clock = Instant::now();
    let mut near = vec![zero; n];
    for b in boxes_at(finest) {
        near_box(&ws.binning, &ws.neighbors, &ws.particles, ws.params, b, |i, v| {
            near[i] = v;
        });
    }
    wall[8] = clock.elapsed().as_secs_f64();

    // Stage 10.
    let clock = Instant::now();
    let out = combine(&far, &near).expect("far and near cover the same particles");
    wall[9] = clock.elapsed().as_secs_f64();

    (out, build_report(ws, wall))
}

/// Stage flop and task counts implied by the instance structure. Stages 1–3
/// are bookkeeping and carry no flops by convention.
fn structural_stats<T: Real>(ws: &Workspace<T>) -> ([u64; 10], [u64; 10], u64) {
    let levels = ws.tree.levels();
    let t = ws.ops.order() as u64;
    let n = ws.particles.len() as u64;
    let boxes_at = |l: u32| 1u64 << (2 * l);
    let span = |lo: u32, hi: u32| -> u64 {
        if lo > hi {
            0
        } else {
            (lo..=hi).map(boxes_at).sum()
        }
    };

    let tasks = [
        1,
        1,
        1,
        boxes_at(levels),
        span(2, levels.saturating_sub(1)),
        span(2, levels),
        span(3, levels),
        boxes_at(levels),
        boxes_at(levels),
        1,
    ];
    let m2l_entries: u64 = (2..=levels)
        .map(|l| ws.interactions_at(l).total_entries() as u64)
        .sum();
    let flops = [
        0,
        0,
        0,
        (8 * t + 3) * n,
        tasks[4] * costmodel::m2m_cell_cost(t as u32),
        (2 + 17 * t * t) * m2l_entries,
        tasks[6] * (2 + 10 * t * t),
        (8 * t + 2) * n,
        22 * ws.near_pairs,
        2 * n,
    ];
    (flops, tasks, m2l_entries)
}

fn build_report<T: Real>(ws: &Workspace<T>, wall: [f64; 10]) -> StageReport {
    let (flops, tasks, m2l_entries) = structural_stats(ws);
    let mut stages = [StageStats::default(); 10];
    for s in 0..10 {
        stages[s] = StageStats {
            flops: flops[s],
            wall_seconds: wall[s],
            tasks: tasks[s],
        };
    }
    StageReport {
        stages,
        n: ws.particles.len(),
        levels: ws.tree.levels(),
        order: ws.ops.order(),
        near_pairs: ws.near_pairs,
        m2l_entries,
    }
}

/// Stage wall times from a pool run: stages 1–3 use the preparation
/// timings, the rest sum task durations across workers.
fn report_from_trace<T: Real>(ws: &Workspace<T>, trace: &ExecutionTrace) -> StageReport {
    let mut wall = [0f64; 10];
    wall[..3].copy_from_slice(&ws.prep_seconds);
    for entry in &trace.entries {
        if entry.stage >= 4 {
            wall[(entry.stage - 1) as usize] +=
                (entry.end_ns - entry.start_ns) as f64 / 1e9;
        }
    }
    build_report(ws, wall)
}

/// Instrumented counts against the closed-form predictions for the same
/// instance dimensions.
#[derive(Clone, Copy, Debug)]
pub struct FlopReport {
    pub counted_p2m: u64,
    /// Includes the model's constant overhead of 2 flops.
    pub predicted_init: u64,
    pub init_consistent: bool,
    pub counted_direct: u64,
    pub predicted_direct: f64,
    pub direct_consistent: bool,
    /// N / 4^L; need not be integral.
    pub particles_per_box: f64,
}

/// Reconciles the instrumented stage-4 and stage-9 counts with the closed
/// forms. The direct-sum prediction assumes a uniform occupancy of N/4^L
/// per box, so the flag only holds for uniform instances.
pub fn flop_report(report: &StageReport) -> FlopReport {
    let predicted_init = costmodel::work_init(report.n as u64, report.order as u32);
    let counted_p2m = report.stage(4).flops;
    let particles_per_box = report.n as f64 / 4f64.powi(report.levels as i32);
    let predicted_direct = costmodel::work_direct::<f64>(report.levels, particles_per_box);
    let counted_direct = report.stage(9).flops;
    FlopReport {
        counted_p2m,
        predicted_init,
        init_consistent: predicted_init == counted_p2m + 2,
        counted_direct,
        predicted_direct,
        direct_consistent: (counted_direct as f64 - predicted_direct).abs() <= 0.5,
        particles_per_box,
    }
}
