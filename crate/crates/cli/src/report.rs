//! JSON report layout shared by all analysis commands.

use std::collections::BTreeMap;
use std::time::Instant;

use newton_spectra::birman::BSScanResult;
use newton_spectra::curvature::CurvatureSummary;
use newton_spectra::eigen::Method;
use newton_spectra::verify::{CorollaryReport, LemmaReport};
use newton_spectra::{Error, IdentityReport, Spectrum, TheoremReport, ValidationReport};
use serde::Serialize;

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Serialize)]
pub struct MeshStats {
    #[serde(flatten)]
    pub validation: ValidationReport,
    pub total_area: f64,
}

#[derive(Debug, Serialize)]
pub struct SpectrumSection {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub method: Method,
    pub seed: u64,
    pub shift: Option<f64>,
    pub iterations: usize,
    pub tol: f64,
    pub multiplet_tol: f64,
    /// Half-open index ranges of eigenvalue clusters.
    pub multiplets: Vec<[usize; 2]>,
}

impl SpectrumSection {
    pub fn new(s: &Spectrum, tol: f64, multiplet_tol: f64) -> Self {
        Self {
            eigenvalues: s.eigenvalues.clone(),
            residuals: s.residuals.clone(),
            method: s.method,
            seed: s.seed,
            shift: s.shift,
            iterations: s.iterations,
            tol,
            multiplet_tol,
            multiplets: s
                .multiplets(multiplet_tol)
                .into_iter()
                .map(|r| [r.start, r.end])
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Verdicts {
    pub theorem: TheoremReport,
    pub corollary: Result<CorollaryReport, String>,
    pub lemma: LemmaReport,
    /// Every check above passed.
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct ErrorBlock {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertex: Option<usize>,
}

impl ErrorBlock {
    pub fn from_error(e: &Error) -> Self {
        let (kind, vertex) = match e {
            Error::CurvatureNotPositive { vertex, .. } => ("precondition", *vertex),
            Error::NonManifoldEdge { .. }
            | Error::OpenBoundary { .. }
            | Error::InconsistentOrientation { .. }
            | Error::DegenerateGeometry(_) => ("invalid_mesh", None),
            Error::InvalidArgument(_) => ("usage", None),
            _ => ("failure", None),
        };
        Self {
            kind,
            message: e.to_string(),
            exit_code: exit_code(e),
            vertex,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::CurvatureNotPositive { .. }
        | Error::NonManifoldEdge { .. }
        | Error::OpenBoundary { .. }
        | Error::InconsistentOrientation { .. }
        | Error::DegenerateGeometry(_) => EXIT_PRECONDITION,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: RunConfig,
    pub mesh_stats: Option<MeshStats>,
    pub curvature_summary: Option<CurvatureSummary>,
    pub identities: Option<IdentityReport>,
    pub spectrum: Option<SpectrumSection>,
    pub birman_schwinger: Option<BSScanResult>,
    pub verdicts: Option<Verdicts>,
    /// Stage wall-clock times in seconds; empty unless requested, so that
    /// reports stay byte-identical across runs.
    pub timings: BTreeMap<String, f64>,
    pub error: Option<ErrorBlock>,
}

impl Report {
    pub fn new(config: RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config,
            mesh_stats: None,
            curvature_summary: None,
            identities: None,
            spectrum: None,
            birman_schwinger: None,
            verdicts: None,
            timings: BTreeMap::new(),
            error: None,
        }
    }

    /// Runs `f`, recording its duration under `stage` when timings are on.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if self.config.timings {
            self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
