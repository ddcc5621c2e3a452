//! Two-dimensional fast multipole engine for the regularized Biot-Savart
//! kernel, built around an explicit task graph so that near-field work can
//! overlap the multipole sweeps, plus an analytic cost model of the whole
//! pipeline.
//!
//! The crate is generic over the scalar type through the [`Real`] trait;
//! concrete `f64`/`f32` aliases live at the crate root.

use core::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

pub mod costmodel;
pub mod engine;
pub mod error;
pub mod expansion;
pub mod generate;
pub mod io;
pub mod kernel;
pub mod quadtree;
pub mod scheduler;

pub use error::FmmError;
pub use num_complex::Complex;

/// Scalar type the engine is generic over.
///
/// Covers `f32` and `f64`; anything satisfying the bounds works.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Debug + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + NumAssign + Debug + Send + Sync + 'static
{
}

/// Shorthand for converting an `f64` literal into the working scalar.
pub(crate) fn rf<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert into the working scalar")
}

/// Physical velocity packed as `u + i v`. (Internally the expansions carry
/// the conjugate-analytic field `u - i v`; every evaluation conjugates back
/// before returning.)
pub type Velocity<T> = Complex<T>;

/// How stage 9 (near-field direct evaluation) is interleaved with the
/// multipole sweeps: strictly after them, or filling idle workers during
/// them. Results are identical; only the schedule differs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExecMode {
    Sequential,
    Overlapped,
}

impl core::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            ExecMode::Sequential => "sequential",
            ExecMode::Overlapped => "overlapped",
        })
    }
}

pub type Velocity64 = Velocity<f64>;
pub type Velocity32 = Velocity<f32>;

pub type Particle64 = quadtree::Particle<f64>;
pub type Particle32 = quadtree::Particle<f32>;
pub type Quadtree64 = quadtree::Quadtree<f64>;
pub type Quadtree32 = quadtree::Quadtree<f32>;

pub type FmmConfig64 = engine::FmmConfig<f64>;
pub type FmmConfig32 = engine::FmmConfig<f32>;
pub type MachineModel64 = costmodel::MachineModel<f64>;
pub type CostCoefficients64 = costmodel::CostCoefficients<f64>;
pub type TimelineReport64 = costmodel::TimelineReport<f64>;
