//! Benchmarking toolkit for subset-based digital image correlation.
//!
//! The crate generates synthetic speckle images deformed by known analytic
//! fields, matches them with two correlation engines, reconstructs strain
//! fields, and scores everything against the imposed ground truth:
//!
//! - [`fields`]: analytic deformation fields (rigid, affine, bending of a
//!   loaded cantilever) with displacements, gradients and strains.
//! - [`synth`]: the speckle pattern simulator and the 8-bit image raster.
//! - [`interp`]: bicubic spline interpolation with analytic derivatives.
//! - [`dic`]: the Basic (integer search + biparabolic subpixel fit) and
//!   Extended (six-parameter Newton-Raphson) correlation engines.
//! - [`strain`]: strain reconstruction from full-field results.
//! - [`metrics`]: displacement and strain error statistics.
//! - [`harness`]: reproducible experiment runs, CSV reports and the
//!   self-check suite behind `dicbench verify`.

pub mod dic;
pub mod error;
pub mod fields;
pub mod harness;
pub mod interp;
pub mod metrics;
pub mod strain;
pub mod synth;

pub use error::{Error, Result};
