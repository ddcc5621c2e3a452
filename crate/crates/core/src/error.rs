use thiserror::Error;

/// Unified error type for tree construction, expansion operators, the
/// executor, the cost model, and file I/O.
#[derive(Debug, Error)]
pub enum FmmError {
    /// The quadtree needs at least levels 0..=2 so that interaction lists
    /// are non-trivial.
    #[error("tree depth must be at least 2, got {levels}")]
    InvalidLevels { levels: u32 },

    #[error("level {level} out of range, tree has levels 0..={max}")]
    LevelOutOfRange { level: u32, max: u32 },

    /// Particles must lie in the half-open unit square.
    #[error("particle {index} at ({x}, {y}) lies outside [0,1) x [0,1)")]
    OutOfDomain { index: usize, x: f64, y: f64 },

    /// The singular far-field kernel has no value at zero separation.
    #[error("far-field kernel evaluated at zero separation")]
    SingularPoint,

    /// Multipole-side operators require the well-separated condition
    /// |target - center| >= 2 * source box width.
    #[error("separation {distance} violates the well-separated requirement {required}")]
    NotSeparated { distance: f64, required: f64 },

    #[error("expansion orders differ: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },

    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {message}")]
    InvalidConfig { message: String },

    /// An execution trace failed validation; the message names the
    /// offending task pair or interval.
    #[error("trace validation failed: {message}")]
    Trace { message: String },

    /// A worker thread panicked while running a task.
    #[error("worker panicked in stage {stage}: {message}")]
    WorkerPanicked { stage: u8, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    ParseRow { line: usize, message: String },
}
