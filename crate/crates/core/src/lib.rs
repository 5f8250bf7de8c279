//! Capillary Killing graphs in warped products: geometry, meshing, weak-form
//! assembly, Newton continuation and a-priori estimate certificates.

pub mod assembly;
pub mod expr;
pub mod geometry;
pub mod mesh;
pub mod problem;
pub mod recovery;
pub mod solver;
pub mod sparse;
pub mod verify;

pub use expr::{ExprError, Expression, Var};
pub use geometry::{GeometryError, GraphPointFrame, MetricField, MetricPoint, MetricPreset, Point};
pub use mesh::{Mesh, MeshError, ScalarField};
pub use problem::{CapillaryProblem, DataFn, DeclaredConstants, HeightBound, ProblemError, ValidationReport};
pub use assembly::{AssembledSystem, Assembler, AssemblyError};
pub use sparse::{CsrMatrix, LinearError};
pub use solver::{ContinuationConfig, ContinuationState, ContinuationStatus, NewtonReport, SolverError};
pub use verify::{Certificate, CertificateKind, DenseSolution, TracePoint, VerifyError};
