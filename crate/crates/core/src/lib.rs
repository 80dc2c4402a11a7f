//! Leaf-wise reduction of the mixed scalar curvature flow.
//!
//! On a foliated manifold whose leaves are compact, the flow of the metric
//! along the orthogonal distribution reduces to a scalar reaction-diffusion
//! equation on each leaf,
//!
//! ```text
//! ∂t u = Δu + βu + Ψ1 u⁻¹ − Ψ2 u⁻³,
//! ```
//!
//! whose long-time behaviour is governed by the ground state of the
//! Schrödinger operator `−Δ − β`. This crate discretises model leaves,
//! solves that equation, and reconstructs the geometric quantities of the
//! flow from its solution.

pub mod curvatureflow;
pub mod error;
pub mod fit;
pub mod heatflow;
pub mod implicit;
pub mod leafgrid;
pub mod scenarios;
pub mod schrodinger;

pub use error::{Error, Result};
pub use leafgrid::{build_grid, GridSpec, LeafGrid, ScalarField, Topology, VectorField};
