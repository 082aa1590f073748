//! Monocular 3D human pose lifting with virtual bones.
//!
//! A 2D keypoint sequence is lifted to root-relative 3D joints by three
//! cooperating networks: a bone-length network that attends over randomly
//! sampled frames, a temporal convolutional network that predicts bone
//! directions for the middle frame of a window, and a fully connected
//! composer that turns length-scaled bone vectors into joint positions.
//! Virtual bones (edges between non-adjacent joints) add alternative
//! root-to-joint paths, and a projection-consistency loss ties the
//! frame-to-frame motion of projected predictions to the observed 2D motion.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below fix the precision.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod skeleton;
pub mod train;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub use error::{Error, Result};

/// Floating point scalar used throughout the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; infallible for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal fits scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type CameraIntrinsics64 = geometry::CameraIntrinsics<f64>;
pub type PoseSequence64 = geometry::PoseSequence<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type LiftingModel64 = nets::LiftingModel<f64>;
pub type LiftingModel32 = nets::LiftingModel<f32>;
pub type TrainingSet64 = train::TrainingSet<f64>;
pub use metrics::EvalReport;
