//! Spectral geometry of the operators `-div(P_r ∇·) - W_r²` on closed
//! triangulated surfaces.
//!
//! The pipeline runs mesh → curvature fields → assembled pencil →
//! eigen-solves, with side checks for the geometric identities and the
//! Birman-Schwinger kernel. [`verify`] ties everything together.

// `!(x > y)` is used on purpose so that NaN fails the check; index loops
// mirror the matrix notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assemble;
pub mod birman;
pub mod curvalg;
pub mod curvature;
pub mod eigen;
pub mod error;
pub mod identities;
pub mod mesh;
pub mod sparse;
pub mod surfaces;
pub mod verify;

pub use assemble::{assemble_pencil, OperatorPencil};
pub use birman::{BSScanResult, ScanOptions};
pub use curvalg::{CurvatureTuple, NewtonSpectrum};
pub use curvature::CurvatureField;
pub use eigen::{SolverOptions, Spectrum};
pub use error::{Error, Result};
pub use identities::IdentityReport;
pub use mesh::{Point, TriMesh, ValidationReport};
pub use surfaces::AnalyticSurface;
pub use verify::{Analysis, TheoremReport, Verdict, VerifyConfig};
