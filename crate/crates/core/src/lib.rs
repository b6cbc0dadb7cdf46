//! Classification of landmark sequences as trajectories on the manifold of
//! fixed-rank positive-semidefinite matrices.
//!
//! The pipeline goes from skeleton files ([`skeleton`]) to centered landmark
//! configurations ([`manifold`]), optionally denoised by blended-curve fitting
//! ([`curve`]), compared with the Global Alignment Kernel or DTW
//! ([`alignment`]), and classified with a kernel SVM ([`svm`]).

pub mod alignment;
pub mod curve;
pub mod error;
pub mod manifold;
pub mod pipeline;
pub mod skeleton;
pub mod spline;
pub mod svm;
pub mod synth;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
