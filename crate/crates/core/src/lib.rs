//! Kernel eps-machine reconstruction from observed time series.
//!
//! The pipeline estimates causal states as conditional-distribution
//! embeddings in a reproducing-kernel Hilbert space, recovers their
//! low-dimensional geometry with diffusion maps, estimates the evolution
//! operator that propagates state distributions forward in time, and
//! forecasts back in the original data space. Built-in generators
//! reproduce the four benchmark processes (Even Process, mess3,
//! Lorenz-63 SDE, Lorenz-96 with random high-dimensional embedding).
//!
//! Modules follow the stages of the pipeline:
//!
//! * [`processes`] — benchmark generators and past/future windowing
//! * [`kernels`] — product kernels and Gram matrices
//! * [`embedding`] — conditional embeddings, state Gram matrix, MMD
//! * [`geometry`] — diffusion-map basis of the causal-state set
//! * [`dynamics`] — evolution operator estimation and application
//! * [`prediction`] — function fitting, new-data projection, forecasting
//! * [`discrete`] — clustering and transition-graph extraction
//! * [`pipeline`] — experiment orchestration, persistence, cross-validation

pub mod discrete;
pub mod dynamics;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod pipeline;
pub mod prediction;
pub mod processes;

pub use error::{Error, Result};
