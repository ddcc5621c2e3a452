//! The pipeline as an explicit task DAG: stage-level edges fixed once,
//! expanded into per-box task instances, executed by a worker pool in either
//! mode, with every run emitting a validatable trace.
//!
//! The load-bearing structural fact: near-field tasks (stage 9) depend only
//! on binning (2) and lists (3), never on the expansion stages 4–8, so a
//! pool that would otherwise idle during the coarse sweep levels can run
//! direct evaluations instead.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Instant;

use crate::engine::{self, Workspace};
use crate::expansion::{LocalExpansion, MultipoleExpansion};
use crate::quadtree::{interaction_lists, BoxId, Quadtree};
use crate::{Complex, ExecMode, FmmError, Real, Velocity};

/// Stage-level dependencies, with 0 as the start sink and 11 as the end
/// sink. Note the absence of any edge joining stage 9 to stages 4–8.
pub const STAGE_EDGES: [(u8, u8); 14] = [
    (0, 1),
    (1, 2),
    (1, 3),
    (2, 4),
    (4, 5),
    (5, 6),
    (3, 6),
    (6, 7),
    (7, 8),
    (2, 9),
    (3, 9),
    (8, 10),
    (9, 10),
    (10, 11),
];

/// One schedulable unit. Stages 1–3 and 10 are singletons (`box_id` =
/// `None`); stages 4–9 carry the box they operate on, which also encodes
/// the level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Task {
    pub stage: u8,
    pub box_id: Option<BoxId>,
}

/// The expanded instance DAG for one tree shape.
#[derive(Clone, Debug)]
pub struct TaskGraph {
    levels: u32,
    tasks: Vec<Task>,
    deps: Vec<Vec<usize>>,
    dependents: Vec<Vec<usize>>,
}

impl TaskGraph {
    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Task indices that must complete before `task` may start.
    pub fn dependencies(&self, task: usize) -> &[usize] {
        &self.deps[task]
    }

    /// The fixed stage-level edge list, start/end sinks included.
    pub fn stage_edges(&self) -> &'static [(u8, u8)] {
        &STAGE_EDGES
    }

    /// Whether the stage-level graph has a directed path `from → to`.
    pub fn stage_reachable(&self, from: u8, to: u8) -> bool {
        let mut frontier = vec![from];
        let mut seen = [false; 12];
        while let Some(s) = frontier.pop() {
            if s == to {
                return true;
            }
            for &(a, b) in STAGE_EDGES.iter() {
                if a == s && !seen[b as usize] {
                    seen[b as usize] = true;
                    frontier.push(b);
                }
            }
        }
        false
    }

    pub fn instance_count(&self, stage: u8) -> usize {
        self.tasks.iter().filter(|t| t.stage == stage).count()
    }

    /// Distinct tree levels a stage's instances touch, ascending.
    pub fn stage_levels(&self, stage: u8) -> Vec<u32> {
        let mut levels: Vec<u32> = self
            .tasks
            .iter()
            .filter(|t| t.stage == stage)
            .filter_map(|t| t.box_id.map(|b| b.level))
            .collect();
        levels.sort_unstable();
        levels.dedup();
        levels
    }

    /// Kahn's algorithm; errors would mean a construction bug, but the
    /// check is cheap and keeps the acyclicity claim testable.
    pub fn topological_order(&self) -> Result<Vec<usize>, FmmError> {
        let mut remaining: Vec<usize> = self.deps.iter().map(Vec::len).collect();
        let mut ready: VecDeque<usize> = (0..self.tasks.len())
            .filter(|&i| remaining[i] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.tasks.len());
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for &d in &self.dependents[i] {
                remaining[d] -= 1;
                if remaining[d] == 0 {
                    ready.push_back(d);
                }
            }
        }
        if order.len() != self.tasks.len() {
            return Err(FmmError::Trace {
                message: format!(
                    "task graph has a cycle: only {} of {} tasks are orderable",
                    order.len(),
                    self.tasks.len()
                ),
            });
        }
        Ok(order)
    }
}

/// Expands the stage DAG into per-box task instances for `tree`.
///
/// Dependencies are exact: a translation waits only on the producers of the
/// expansions it reads, which is what frees unrelated work to proceed. When
/// L = 2 there are no stage-5/7 instances and the stage-6 outputs feed
/// stage 8 directly, collapsing the 4→5→6 and 6→7→8 chains.
pub fn build_dag<T: Real>(tree: &Quadtree<T>) -> TaskGraph {
    let levels = tree.levels();
    let boxes = |l: u32| (0..1usize << (2 * l)).map(move |lin| BoxId::from_linear(l, lin));

    let mut tasks: Vec<Task> = Vec::new();
    let mut index: HashMap<(u8, BoxId), usize> = HashMap::new();
    let add = |tasks: &mut Vec<Task>, index: &mut HashMap<(u8, BoxId), usize>,
                   stage: u8,
                   box_id: Option<BoxId>| {
        let i = tasks.len();
        tasks.push(Task { stage, box_id });
        if let Some(b) = box_id {
            index.insert((stage, b), i);
        }
    };

    for stage in 1..=3 {
        add(&mut tasks, &mut index, stage, None);
    }
    for b in boxes(levels) {
        add(&mut tasks, &mut index, 4, Some(b));
    }
    for l in (2..levels).rev() {
        for b in boxes(l) {
            add(&mut tasks, &mut index, 5, Some(b));
        }
    }
    for l in 2..=levels {
        for b in boxes(l) {
            add(&mut tasks, &mut index, 6, Some(b));
        }
    }
    for l in 3..=levels {
        for b in boxes(l) {
            add(&mut tasks, &mut index, 7, Some(b));
        }
    }
    for b in boxes(levels) {
        add(&mut tasks, &mut index, 8, Some(b));
    }
    for b in boxes(levels) {
        add(&mut tasks, &mut index, 9, Some(b));
    }
    add(&mut tasks, &mut index, 10, None);

    // Producer of a box's multipole: P2M at the finest level, M2M above.
    let mult_producer = |b: BoxId| -> usize {
        let stage = if b.level == levels { 4 } else { 5 };
        index[&(stage, b)]
    };
    // Producer of a box's full local: the M2L sum alone at level 2, the
    // L2L-augmented local below.
    let full_producer = |b: BoxId| -> usize {
        let stage = if b.level == 2 { 6 } else { 7 };
        index[&(stage, b)]
    };

    let interactions: Vec<_> = (2..=levels)
        .map(|l| interaction_lists(tree, l).expect("levels 2..=L are in range"))
        .collect();

    let deps: Vec<Vec<usize>> = tasks
        .iter()
        .enumerate()
        .map(|(i, task)| match task.stage {
            1 => Vec::new(),
            2 | 3 => vec![0],
            4 => vec![1],
            5 => task
                .box_id
                .expect("stage 5 tasks carry a box")
                .children()
                .iter()
                .map(|&c| mult_producer(c))
                .collect(),
            6 => {
                let b = task.box_id.expect("stage 6 tasks carry a box");
                let mut d = vec![2];
                d.extend(
                    interactions[(b.level - 2) as usize]
                        .partners_of(b)
                        .iter()
                        .map(|&p| mult_producer(p)),
                );
                d
            }
            7 => {
                let b = task.box_id.expect("stage 7 tasks carry a box");
                let parent = b.parent().expect("levels ≥ 3 have parents");
                vec![index[&(6, b)], full_producer(parent)]
            }
            8 => {
                let b = task.box_id.expect("stage 8 tasks carry a box");
                vec![full_producer(b)]
            }
            9 => vec![1, 2],
            10 => tasks
                .iter()
                .enumerate()
                .filter(|(_, t)| t.stage == 8 || t.stage == 9)
                .map(|(j, _)| j)
                .collect(),
            _ => unreachable!("task {i} has stage outside 1..=10"),
        })
        .collect();

    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); tasks.len()];
    for (i, d) in deps.iter().enumerate() {
        for &j in d {
            dependents[j].push(i);
        }
    }

    TaskGraph {
        levels,
        tasks,
        deps,
        dependents,
    }
}

/// One completed task as observed by the pool, timestamps in nanoseconds
/// from a common run-local origin.
#[derive(Clone, Copy, Debug)]
pub struct TraceEntry {
    pub task: usize,
    pub stage: u8,
    pub box_id: Option<BoxId>,
    pub worker: usize,
    pub start_ns: u64,
    pub end_ns: u64,
}

/// Record of one pool run, sorted by start time.
#[derive(Clone, Debug, Default)]
pub struct ExecutionTrace {
    pub entries: Vec<TraceEntry>,
}

impl ExecutionTrace {
    /// Rows of "stage,box,worker,start_ns,end_ns". Per-box tasks export the
    /// box's global index; singleton tasks export 0.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let box_tag = e.box_id.map(|b| b.global_index()).unwrap_or(0);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.stage, box_tag, e.worker, e.start_ns, e.end_ns
            ));
        }
        out
    }

    /// Earliest start and latest end over a stage's entries.
    pub fn stage_window(&self, stage: u8) -> Option<(u64, u64)> {
        let mut window: Option<(u64, u64)> = None;
        for e in self.entries.iter().filter(|e| e.stage == stage) {
            window = Some(match window {
                None => (e.start_ns, e.end_ns),
                Some((s, t)) => (s.min(e.start_ns), t.max(e.end_ns)),
            });
        }
        window
    }
}

/// A pool run that died mid-flight; whatever completed is in the trace.
#[derive(Debug)]
pub struct Aborted {
    pub error: FmmError,
    pub partial_trace: ExecutionTrace,
}

impl From<Aborted> for FmmError {
    fn from(aborted: Aborted) -> Self {
        aborted.error
    }
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} tasks completed before abort)",
            self.error,
            self.partial_trace.entries.len()
        )
    }
}

/// Single-writer output slots. Every cell is written by exactly one task
/// and read only by tasks that depend on that writer, so a completed
/// dependency guarantees the value is present.
struct Slots<T: Real> {
    mults: Vec<Vec<OnceLock<MultipoleExpansion<T>>>>,
    m2l: Vec<Vec<OnceLock<LocalExpansion<T>>>>,
    full: Vec<Vec<OnceLock<LocalExpansion<T>>>>,
    far: Vec<OnceLock<Velocity<T>>>,
    near: Vec<OnceLock<Velocity<T>>>,
    out: OnceLock<Vec<Velocity<T>>>,
}

impl<T: Real> Slots<T> {
    fn new(levels: u32, n: usize) -> Self {
        let shape = |lo: u32| -> Vec<Vec<OnceLock<LocalExpansion<T>>>> {
            (0..=levels)
                .map(|l| {
                    if l < lo {
                        Vec::new()
                    } else {
                        (0..1usize << (2 * l)).map(|_| OnceLock::new()).collect()
                    }
                })
                .collect()
        };
        Slots {
            mults: (0..=levels)
                .map(|l| {
                    if l < 2 {
                        Vec::new()
                    } else {
                        (0..1usize << (2 * l)).map(|_| OnceLock::new()).collect()
                    }
                })
                .collect(),
            m2l: shape(2),
            full: shape(3),
            far: (0..n).map(|_| OnceLock::new()).collect(),
            near: (0..n).map(|_| OnceLock::new()).collect(),
            out: OnceLock::new(),
        }
    }

    fn set_once<V>(cell: &OnceLock<V>, value: V, what: &str) {
        if cell.set(value).is_err() {
            panic!("{what} written twice");
        }
    }
}

struct QueueState {
    ready_sweep: VecDeque<usize>,
    ready_direct: VecDeque<usize>,
    deferred_direct: Vec<usize>,
    remaining: Vec<usize>,
    stage8_remaining: usize,
    completed: usize,
    panic: Option<(u8, String)>,
}

/// Runs the instance DAG on `workers` pool threads.
///
/// Sweep-stage tasks always outrank stage-9 tasks in the ready queue, so
/// direct evaluation soaks up idle capacity without delaying the critical
/// path. In sequential mode stage-9 tasks are additionally held back until
/// every stage-8 task has finished — a scheduling constraint, not a graph
/// edge.
pub fn execute<T: Real>(
    graph: &TaskGraph,
    ws: &Workspace<T>,
    mode: ExecMode,
    workers: usize,
) -> Result<(Vec<Velocity<T>>, ExecutionTrace), Aborted> {
    let fail = |error: FmmError| Aborted {
        error,
        partial_trace: ExecutionTrace::default(),
    };
    if workers == 0 {
        return Err(fail(FmmError::InvalidConfig {
            message: "worker count must be at least 1".into(),
        }));
    }
    if graph.levels != ws.tree().levels() {
        return Err(fail(FmmError::InvalidConfig {
            message: format!(
                "task graph was built for {} levels, workspace has {}",
                graph.levels,
                ws.tree().levels()
            ),
        }));
    }

    let total = graph.tasks.len();
    let slots = Slots::<T>::new(graph.levels, ws.particles().len());
    let queue = Mutex::new(QueueState {
        ready_sweep: VecDeque::from(vec![0]),
        ready_direct: VecDeque::new(),
        deferred_direct: Vec::new(),
        remaining: graph.deps.iter().map(Vec::len).collect(),
        stage8_remaining: graph.instance_count(8),
        completed: 0,
        panic: None,
    });
    let ready = Condvar::new();
    let base = Instant::now();

    let mut worker_traces: Vec<Vec<TraceEntry>> = Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|worker| {
                let slots = &slots;
                let queue = &queue;
                let ready = &ready;
                scope.spawn(move || {
                    worker_loop(worker, graph, ws, slots, queue, ready, mode, total, base)
                })
            })
            .collect();
        for handle in handles {
            worker_traces.push(handle.join().expect("workers catch their own panics"));
        }
    });

    let mut entries: Vec<TraceEntry> = worker_traces.into_iter().flatten().collect();
    entries.sort_by_key(|e| (e.start_ns, e.task));
    let trace = ExecutionTrace { entries };

    let state = queue.into_inner().expect("pool threads have exited");
    if let Some((stage, message)) = state.panic {
        return Err(Aborted {
            error: FmmError::WorkerPanicked { stage, message },
            partial_trace: trace,
        });
    }
    let velocities = slots
        .out
        .into_inner()
        .expect("stage 10 ran: all tasks completed without panic");
    Ok((velocities, trace))
}

#[allow(clippy::too_many_arguments)]
fn worker_loop<T: Real>(
    worker: usize,
    graph: &TaskGraph,
    ws: &Workspace<T>,
    slots: &Slots<T>,
    queue: &Mutex<QueueState>,
    ready: &Condvar,
    mode: ExecMode,
    total: usize,
    base: Instant,
) -> Vec<TraceEntry> {
    let mut local = Vec::new();
    let mut state = queue.lock().expect("queue mutex is never poisoned");
    loop {
        if state.panic.is_some() || state.completed == total {
            ready.notify_all();
            return local;
        }
        let next = state
            .ready_sweep
            .pop_front()
            .or_else(|| state.ready_direct.pop_front());
        let Some(task_idx) = next else {
            state = ready.wait(state).expect("queue mutex is never poisoned");
            continue;
        };
        drop(state);

        let task = graph.tasks[task_idx];
        let start_ns = base.elapsed().as_nanos() as u64;
        let outcome = catch_unwind(AssertUnwindSafe(|| run_task(task, graph.levels, ws, slots)));
        let end_ns = base.elapsed().as_nanos() as u64;

        state = queue.lock().expect("queue mutex is never poisoned");
        match outcome {
            Ok(()) => {
                local.push(TraceEntry {
                    task: task_idx,
                    stage: task.stage,
                    box_id: task.box_id,
                    worker,
                    start_ns,
                    end_ns,
                });
                complete(&mut state, graph, task_idx, mode);
            }
            Err(payload) => {
                state.panic = Some((task.stage, panic_message(payload)));
            }
        }
        ready.notify_all();
    }
}

/// Marks `task_idx` done and moves newly unblocked tasks into the ready
/// queues, honoring the sequential-mode stage-8 barrier for stage 9.
fn complete(state: &mut QueueState, graph: &TaskGraph, task_idx: usize, mode: ExecMode) {
    state.completed += 1;
    if graph.tasks[task_idx].stage == 8 {
        state.stage8_remaining -= 1;
        if state.stage8_remaining == 0 {
            let deferred = std::mem::take(&mut state.deferred_direct);
            state.ready_direct.extend(deferred);
        }
    }
    for &dep in &graph.dependents[task_idx] {
        state.remaining[dep] -= 1;
        if state.remaining[dep] == 0 {
            enqueue(state, graph, dep, mode);
        }
    }
}

fn enqueue(state: &mut QueueState, graph: &TaskGraph, task_idx: usize, mode: ExecMode) {
    if graph.tasks[task_idx].stage == 9 {
        if mode == ExecMode::Sequential && state.stage8_remaining > 0 {
            state.deferred_direct.push(task_idx);
        } else {
            state.ready_direct.push_back(task_idx);
        }
    } else {
        state.ready_sweep.push_back(task_idx);
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic payload of unknown type".to_string()
    }
}

/// Task bodies. Stages 1–3 are synchronization points — their work happened
/// in `engine::prepare` — and the numeric stages call the same per-box
/// routines as the serial path.
fn run_task<T: Real>(task: Task, levels: u32, ws: &Workspace<T>, slots: &Slots<T>) {
    match task.stage {
        1 | 2 | 3 => {}
        4 => {
            let b = task.box_id.expect("stage 4 tasks carry a box");
            let m = engine::p2m_box(ws.tree(), &ws.binning, ws.particles(), &ws.ops, b);
            Slots::<T>::set_once(&slots.mults[b.level as usize][b.linear()], m, "multipole");
        }
        5 => {
            let b = task.box_id.expect("stage 5 tasks carry a box");
            let m = engine::m2m_box(ws.tree(), &ws.ops, b, |c| {
                slots.mults[c.level as usize][c.linear()]
                    .get()
                    .expect("child multipole precedes its parent's M2M")
            });
            Slots::<T>::set_once(&slots.mults[b.level as usize][b.linear()], m, "multipole");
        }
        6 => {
            let b = task.box_id.expect("stage 6 tasks carry a box");
            let l = engine::m2l_box(ws.tree(), &ws.ops, ws.interactions_at(b.level), b, |p| {
                slots.mults[p.level as usize][p.linear()]
                    .get()
                    .expect("partner multipole precedes M2L")
            });
            Slots::<T>::set_once(&slots.m2l[b.level as usize][b.linear()], l, "M2L local");
        }
        7 => {
            let b = task.box_id.expect("stage 7 tasks carry a box");
            let parent = b.parent().expect("levels ≥ 3 have parents");
            let parent_full = if parent.level == 2 {
                &slots.m2l[2][parent.linear()]
            } else {
                &slots.full[parent.level as usize][parent.linear()]
            }
            .get()
            .expect("parent local precedes its children's L2L");
            let own = slots.m2l[b.level as usize][b.linear()]
                .get()
                .expect("own M2L sum precedes L2L");
            let full = engine::full_local_box(ws.tree(), &ws.ops, b, own, parent_full);
            Slots::<T>::set_once(&slots.full[b.level as usize][b.linear()], full, "full local");
        }
        8 => {
            let b = task.box_id.expect("stage 8 tasks carry a box");
            let local = if levels == 2 {
                &slots.m2l[2][b.linear()]
            } else {
                &slots.full[levels as usize][b.linear()]
            }
            .get()
            .expect("finest local precedes L2P");
            engine::far_box(&ws.binning, ws.particles(), &ws.ops, b, local, |i, v| {
                Slots::<T>::set_once(&slots.far[i], v, "far velocity");
            });
        }
        9 => {
            let b = task.box_id.expect("stage 9 tasks carry a box");
            engine::near_box(
                &ws.binning,
                &ws.neighbors,
                ws.particles(),
                ws.params,
                b,
                |i, v| {
                    Slots::<T>::set_once(&slots.near[i], v, "near velocity");
                },
            );
        }
        10 => {
            let zero = Complex::new(T::zero(), T::zero());
            let gather = |cells: &[OnceLock<Velocity<T>>]| -> Vec<Velocity<T>> {
                cells
                    .iter()
                    .map(|c| *c.get().unwrap_or(&zero))
                    .collect()
            };
            let far = gather(&slots.far);
            let near = gather(&slots.near);
            let combined =
                engine::combine(&far, &near).expect("far and near cover the same particles");
            Slots::<T>::set_once(&slots.out, combined, "combined velocities");
        }
        other => unreachable!("stage {other} has no task body"),
    }
}

// --- Trace validation -----------------------------------------------------

/// Idle accounting extracted from a validated trace.
#[derive(Clone, Debug)]
pub struct TraceReport {
    /// Latest end minus earliest start over the whole run.
    pub span_ns: u64,
    /// Per worker id: nanoseconds spent inside tasks.
    pub worker_busy_ns: Vec<u64>,
    /// Per worker id: span minus busy time.
    pub worker_idle_ns: Vec<u64>,
    /// Per worker id, per stage (index 0 = stage 1): idle nanoseconds
    /// inside that stage's wall-clock window.
    pub idle_in_stage_window: Vec<[u64; 10]>,
    /// Stage-9 task time overlapping the translation phase (the window
    /// spanned by stages 5–7): positive exactly when direct evaluation ran
    /// during the sweeps.
    pub direct_in_sweep_ns: u64,
}

fn task_tag(t: &Task) -> String {
    match t.box_id {
        Some(b) => format!(
            "stage {} box (level {}, {}, {})",
            t.stage, b.level, b.i, b.j
        ),
        None => format!("stage {}", t.stage),
    }
}

/// Checks a trace against the graph: every instance exactly once, no task
/// before its dependencies, no worker in two places at once. Violations
/// name the offending task pair.
pub fn validate_trace(graph: &TaskGraph, trace: &ExecutionTrace) -> Result<TraceReport, FmmError> {
    let total = graph.tasks.len();
    if trace.entries.len() != total {
        return Err(FmmError::Trace {
            message: format!(
                "expected {} task records, found {}",
                total,
                trace.entries.len()
            ),
        });
    }
    let mut end_of: Vec<Option<(u64, u64)>> = vec![None; total];
    for e in &trace.entries {
        if e.task >= total {
            return Err(FmmError::Trace {
                message: format!("record references task {} of {}", e.task, total),
            });
        }
        let task = graph.tasks[e.task];
        if task.stage != e.stage || task.box_id != e.box_id {
            return Err(FmmError::Trace {
                message: format!(
                    "record for task {} claims {}, graph says {}",
                    e.task,
                    task_tag(&Task {
                        stage: e.stage,
                        box_id: e.box_id
                    }),
                    task_tag(&task)
                ),
            });
        }
        if e.end_ns < e.start_ns {
            return Err(FmmError::Trace {
                message: format!("task {} ({}) ends before it starts", e.task, task_tag(&task)),
            });
        }
        if end_of[e.task].is_some() {
            return Err(FmmError::Trace {
                message: format!("task {} ({}) appears twice", e.task, task_tag(&task)),
            });
        }
        end_of[e.task] = Some((e.start_ns, e.end_ns));
    }

    for e in &trace.entries {
        for &d in &graph.deps[e.task] {
            let (_, dep_end) = end_of[d].expect("all tasks recorded");
            if e.start_ns < dep_end {
                return Err(FmmError::Trace {
                    message: format!(
                        "task {} ({}) started at {} ns before its dependency task {} ({}) \
                         finished at {} ns",
                        e.task,
                        task_tag(&graph.tasks[e.task]),
                        e.start_ns,
                        d,
                        task_tag(&graph.tasks[d]),
                        dep_end
                    ),
                });
            }
        }
    }

    let worker_count = trace
        .entries
        .iter()
        .map(|e| e.worker + 1)
        .max()
        .unwrap_or(0);
    let mut per_worker: Vec<Vec<&TraceEntry>> = vec![Vec::new(); worker_count];
    for e in &trace.entries {
        per_worker[e.worker].push(e);
    }
    for list in &mut per_worker {
        list.sort_by_key(|e| (e.start_ns, e.end_ns));
        for pair in list.windows(2) {
            if pair[1].start_ns < pair[0].end_ns {
                return Err(FmmError::Trace {
                    message: format!(
                        "worker {} ran task {} ({}) and task {} ({}) at overlapping times",
                        pair[0].worker,
                        pair[0].task,
                        task_tag(&graph.tasks[pair[0].task]),
                        pair[1].task,
                        task_tag(&graph.tasks[pair[1].task]),
                    ),
                });
            }
        }
    }

    // Accounting. Windows are per-stage wall-clock extents; a worker's busy
    // intervals are disjoint (just checked), so overlaps add up directly.
    let span_start = trace.entries.iter().map(|e| e.start_ns).min().unwrap_or(0);
    let span_end = trace.entries.iter().map(|e| e.end_ns).max().unwrap_or(0);
    let span_ns = span_end - span_start;
    let overlap = |s0: u64, e0: u64, s1: u64, e1: u64| -> u64 {
        let s = s0.max(s1);
        let e = e0.min(e1);
        e.saturating_sub(s)
    };

    let mut worker_busy_ns = vec![0u64; worker_count];
    for e in &trace.entries {
        worker_busy_ns[e.worker] += e.end_ns - e.start_ns;
    }
    let worker_idle_ns = worker_busy_ns.iter().map(|&b| span_ns - b).collect();

    let windows: Vec<Option<(u64, u64)>> = (1..=10).map(|s| trace.stage_window(s)).collect();
    let idle_in_stage_window = per_worker
        .iter()
        .map(|list| {
            let mut idle = [0u64; 10];
            for (s, window) in windows.iter().enumerate() {
                let Some((ws_, we)) = *window else { continue };
                let busy: u64 = list
                    .iter()
                    .map(|e| overlap(e.start_ns, e.end_ns, ws_, we))
                    .sum();
                idle[s] = (we - ws_) - busy;
            }
            idle
        })
        .collect();

    let sweep_window = [5u8, 6, 7]
        .iter()
        .filter_map(|&s| trace.stage_window(s))
        .reduce(|(s0, e0), (s1, e1)| (s0.min(s1), e0.max(e1)));
    let direct_in_sweep_ns = match sweep_window {
        Some((ws_, we)) => trace
            .entries
            .iter()
            .filter(|e| e.stage == 9)
            .map(|e| overlap(e.start_ns, e.end_ns, ws_, we))
            .sum(),
        None => 0,
    };

    Ok(TraceReport {
        span_ns,
        worker_busy_ns,
        worker_idle_ns,
        idle_in_stage_window,
        direct_in_sweep_ns,
    })
}
