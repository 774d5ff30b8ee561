//! Narrow-band solvers for PDEs on surfaces.
//!
//! The crate solves heat diffusion and Poisson problems on a surface by
//! embedding them in a thin Cartesian band around it. Fields live on band
//! grid nodes; every solve alternates an *extension* step, which restores
//! constancy of the field along surface normals, with a standard
//! finite-difference update on the grid. Three extension back ends are
//! provided:
//!
//! - [`operator`]: a small geometry-conditioned attention network that
//!   predicts the extended value at a query point from the local band
//!   stencil and nearby surface features, trained once on monomial probe
//!   functions over a single bumpy training shape ([`training`]).
//! - [`baselines`]: the classical closest-point re-extension (tricubic
//!   interpolation at the closest surface point) and a cotangent-Laplacian
//!   FEM reference solver on triangle meshes.
//! - analytic sphere solutions via spherical harmonics for validation.
//!
//! Surfaces may be triangle meshes (OBJ), oriented point clouds (XYZ/XYZN),
//! or analytic spheres ([`geometry`]). [`band`] builds the grid band and
//! closest-point map, [`patches`] covers band and surface with overlapping
//! local frames, [`solver`] runs the PDE loops, and [`harness`] holds the
//! error metrics and benchmark suites.

pub mod band;
pub mod baselines;
pub mod geometry;
pub mod harness;
pub mod kdtree;
pub mod operator;
pub mod patches;
pub mod solver;
pub mod training;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("closest point is ambiguous at ({0}, {1}, {2})")]
    AmbiguousClosestPoint(f64, f64, f64),
    #[error("weight file error: {0}")]
    Weights(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// 3D point/vector aliases used across the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
