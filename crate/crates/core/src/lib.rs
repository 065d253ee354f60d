#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Nonlocal diffusion with volume constraints, its multi-term time-fractional
//! variant, nonlocal flux measurements and recovery of the reaction
//! coefficient from them.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which every documented tolerance
//! assumes.

pub mod config;
pub mod domain;
pub mod error;
pub mod fractional;
pub mod inversion;
pub mod kernel;
pub mod limit;
pub mod measurement;
pub mod ops;
pub mod pipeline;
pub mod scalar;
pub mod solver;

pub use domain::{AccessibleRegion, DomainSpec, NodeLabel, NodeSet};
pub use error::{Error, Result};
pub use fractional::{FractionalSpec, LowerTerm};
pub use inversion::{BasisKind, BasisSpec, Experiment, InversionOptions, ReconstructionResult};
pub use kernel::{AntisymmetricField, Kernel, KernelForm, KernelSpec, TensorField};
pub use measurement::{MeasurementSet, SensorSpec};
pub use ops::{AssemblyOptions, Interactions, OperatorMatrix, TwoPointField};
pub use scalar::Real;
pub use solver::{CoefficientField, Model, Propagator, SourceSpec, SpaceTimeField, TimeGrid};

pub type DomainSpec64 = DomainSpec<f64>;
pub type NodeSet64 = NodeSet<f64>;
pub type KernelSpec64 = KernelSpec<f64>;
pub type Interactions64 = Interactions<f64>;
pub type OperatorMatrix64 = OperatorMatrix<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type Model64 = Model<f64>;
pub type Propagator64 = Propagator<f64>;
pub type SpaceTimeField64 = SpaceTimeField<f64>;
pub type SensorSpec64 = SensorSpec<f64>;
pub type MeasurementSet64 = MeasurementSet<f64>;
pub type BasisSpec64 = BasisSpec<f64>;
pub type Experiment64 = Experiment<f64>;
pub type NodeSet32 = NodeSet<f32>;
pub type OperatorMatrix32 = OperatorMatrix<f32>;
