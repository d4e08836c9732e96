//! Numerical toolkit for minimal flows: turns a flux field `v` with `div v = mu - nu`
//! into a weighted ensemble of particle paths, measures how much of `v` the paths
//! reproduce, and solves the Beckmann and Kantorovich problems on atomic data.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the `*64` aliases below
//! name the double-precision instantiations used by the command-line tool.

pub mod beckmann;
pub mod error;
pub mod field;
pub mod io;
pub mod measures;
pub mod moser;
pub mod pipeline;
pub mod regularize;
pub mod scalar;
pub mod scenarios;

pub use error::{Error, Result};
pub use field::{
    divergence, magnitude_field, mass, tv_norm, vector_l1_distance, BoundaryFlux, Grid2D,
    ScalarField, VectorField,
};
pub use beckmann::{
    monotone_harness, solve_beckmann_euclidean, solve_beckmann_graph, solve_kantorovich, Atom,
    CostFunctional, EuclideanSolution, GroundCost, HarnessReport, SolverReport, TransportPlan,
};
pub use measures::{decomposition_report, flow, intensity, DecompositionReport};
pub use moser::{integrate_paths, Path, PathEnsemble};
pub use pipeline::{decompose, Decomposition, PipelineParams};
pub use regularize::{regularize_triple, RegularizationReport};
pub use scalar::Real;

pub type Grid64 = Grid2D<f64>;
pub type ScalarField64 = ScalarField<f64>;
pub type VectorField64 = VectorField<f64>;
pub type Grid32 = Grid2D<f32>;
pub type ScalarField32 = ScalarField<f32>;
pub type VectorField32 = VectorField<f32>;
