//! Numerical workbench for Riesz potential theory.
//!
//! The crate discretizes sets in `ℝⁿ` into weighted point clouds, assembles
//! dense Riesz kernel matrices `|x−y|^{α−n}`, and solves the constrained
//! quadratic programs that underlie classical potential theory: equilibrium
//! measures and capacities, inner balayage and harmonic measure, and the
//! weighted (Gauss-functional) minimum energy problem with an attractive
//! point field. On top of the solvers sit scan utilities: existence probes
//! over truncation ladders, support-radius scans, vague-continuity scans,
//! and Wiener-type series classifiers for boundary regularity, thinness at
//! infinity, and ultrairregularity.
//!
//! The crate is `no_std` (with `alloc`); all floating-point special
//! functions come from `libm`. Everything is deterministic: discretizations
//! are closed-form layouts, solvers are single-threaded with fixed
//! iteration order, and probe points come from a Halton sequence.
#![no_std]

extern crate alloc;

use alloc::string::String;
use core::fmt;

pub mod gauss;
pub mod geometry;
pub mod kernel;
mod math;
pub mod potential_ops;
pub mod solvers;

pub use gauss::{ExistenceVerdict, FieldSpec, WeightedSolveReport};
pub use geometry::{CellKind, DiscreteMeasure, PointCloud, Profile, SetDescriptor};
pub use kernel::KernelContext;
pub use potential_ops::{BalayageResult, EquilibriumResult, WienerReport};
pub use solvers::{QpProblem, QpSolution};

/// Errors shared by all modules.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A set descriptor is degenerate (zero radius, empty domain, ...).
    InvalidDescriptor(String),
    /// A numeric parameter is outside its admissible range.
    InvalidParameter(String),
    /// A measure refers to a different cloud than the kernel context.
    CloudMismatch,
    /// A source point coincides with a cloud node, so its potential there
    /// is undefined.
    PointOnCloud,
    /// Dense assembly refused: the cloud exceeds the configured node cap.
    TooManyNodes { nodes: usize, cap: usize },
    /// The cloud is empty where at least one node is required.
    EmptyCloud,
    /// Not enough ladder rungs (or data points) to extrapolate.
    LadderTooShort,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDescriptor(msg) => write!(f, "invalid set descriptor: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::CloudMismatch => write!(f, "measures live on different point clouds"),
            Error::PointOnCloud => write!(f, "source point coincides with a cloud node"),
            Error::TooManyNodes { nodes, cap } => {
                write!(f, "cloud has {nodes} nodes, dense assembly cap is {cap}")
            }
            Error::EmptyCloud => write!(f, "point cloud has no nodes"),
            Error::LadderTooShort => write!(f, "truncation ladder too short to extrapolate"),
        }
    }
}

impl core::error::Error for Error {}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
