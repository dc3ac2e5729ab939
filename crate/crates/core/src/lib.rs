//! Finite element discretization and implicit gradient flow for the
//! membrane energy of actuated liquid crystal polymer networks.
//!
//! * [`mesh`]: structured and crease-fitted triangulations.
//! * [`material`]: director fields, actuation and the stretching density.
//! * [`fem`]: P1 assembly of the regularized discrete energy.
//! * [`flow`]: H¹ gradient flow with Newton sub-iterations.
//! * [`harness`]: experiment specifications, presets and drivers.

pub mod error;
pub mod fem;
pub mod flow;
pub mod harness;
pub mod material;
pub mod mesh;
pub mod sparse;
pub mod vtk;

pub use error::{DivergenceReason, Error, Result};
pub use fem::{Deformation, EnergyBreakdown, FemProblem};
pub use flow::{FlowConfig, FlowReport, FlowStatus};
pub use harness::{Experiment, ExperimentSpec};
pub use material::{ElementMaterial, MaterialField};
pub use mesh::{CreaseSpec, Rect, TriMesh};
pub use sparse::{SparseSymSystem, SymSparse};
