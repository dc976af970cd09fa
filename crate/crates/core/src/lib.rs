//! Die recognition for stamped flat objects.
//!
//! The pipeline decides whether two coins were struck by the same die:
//! pattern-aware rigid registration of their 3D point clouds, a learned
//! logistic metric over nearest-neighbor distance histograms, and connected
//! component clustering of the thresholded comparison graph.
//!
//! - [`geometry`]: clouds, transforms, kd-tree search, normals, border
//!   exclusion
//! - [`icp`]: local point-to-point / point-to-plane registration
//! - [`global`]: multi-start search over the reduced 3-DOF pose space of
//!   flat objects
//! - [`metric`]: distance maps, histograms, logistic training and prediction
//! - [`cluster`]: comparison matrix, threshold graph, components, ARI
//! - [`synth`]: deterministic synthetic coin corpus with ground truth
//! - [`eval`]: error metrics, convergence-basin maps, sweep and method
//!   tables
//! - [`io`]: PLY/XYZ loading and saving, pipeline configuration files

pub mod cluster;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod global;
pub mod icp;
pub mod io;
pub mod metric;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
