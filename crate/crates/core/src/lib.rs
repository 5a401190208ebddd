//! Segmentation and denoising of grayscale and multi-channel images by a
//! vector-valued phase-field energy with region-fitting terms, minimized on a
//! nested triangulation hierarchy by successive subspace correction.
//!
//! The pipeline: load or synthesize an image ([`imageio`]), build the
//! pixel-aligned mesh hierarchy ([`mesh`]), carry the pixel data onto the
//! finest grid without interpolation ([`fidelity`]), run the constrained
//! semi-implicit solver ([`solver`]), and turn the converged order parameter
//! into composites, labels and error metrics ([`postprocess`]).
//!
//! All nodal math is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod scalar;

pub mod mesh;

pub mod fem;

pub mod simplex;

pub mod fidelity;

pub mod solver;

pub mod postprocess;

pub mod imageio;

pub use scalar::Scalar;

pub type ImageData32 = fidelity::ImageData<f32>;
pub type ImageData64 = fidelity::ImageData<f64>;
pub type MeshImage32 = fidelity::MeshImage<f32>;
pub type MeshImage64 = fidelity::MeshImage<f64>;
pub type PhaseField32 = simplex::PhaseField<f32>;
pub type PhaseField64 = simplex::PhaseField<f64>;
pub type SolverParams32 = solver::SolverParams<f32>;
pub type SolverParams64 = solver::SolverParams<f64>;
pub type Solver32 = solver::Solver<f32>;
pub type Solver64 = solver::Solver<f64>;
pub type SegmentationResult32 = postprocess::SegmentationResult<f32>;
pub type SegmentationResult64 = postprocess::SegmentationResult<f64>;
