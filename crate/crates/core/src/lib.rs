//! Skeleton extraction for partially occluded tree canopies.
//!
//! The pipeline takes segmented branch point clusters (each with a detection
//! confidence), fits a short piecewise-linear chain to every cluster, fuses the
//! chains into a sparse voxel grid of skeleton-occupancy likelihood, and then
//! builds a skeleton graph whose disconnected fragments are joined through
//! minimum-cost paths in that grid.
//!
//! Stages, in order:
//!
//! 1. [`fit`]: degree-one B-spline fitting and PCA radius estimation.
//! 2. [`likelihood`]: per-segment ellipsoidal evidence and independent fusion.
//! 3. [`skeleton`]: vertex sampling, Laplacian smoothing, initial forest,
//!    likelihood graph and fragment joining.
//!
//! [`baselines`] holds the two comparison joiners, [`synth`] the procedural
//! benchmark generator and [`eval`] the scoring. [`io`], [`config`] and
//! [`pipeline`] wire everything into the file formats and commands used by the
//! CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod likelihood;
pub mod mst;
pub mod pipeline;
pub mod plot;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{BranchCluster, LineSegment, Point3, SegmentChain, Vector3};
pub use graph::{Provenance, SkeletonGraph, SkeletonVertex};
