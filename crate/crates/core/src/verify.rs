//! Theorem-level checks: the second eigenvalue of `−L_r − W_r²` against
//! zero, the comparison operator `T_r`, and the two-negative-eigenvalue
//! criterion.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_pencil, OperatorPencil};
use crate::curvalg;
use crate::curvature::{build_fields, CurvatureField};
use crate::eigen::{clusters, m_inner, smallest_eigenpairs, Method, SolverOptions, Spectrum};
use crate::error::{Error, Result};
use crate::identities::{d_quantities, project_mean_zero, project_off_w, test_functions, ZeroMeanResolvent};
use crate::mesh::TriMesh;

/// Thresholds and solver settings; every report echoes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// `tol_sphere = tol_sphere_factor · mean W²`.
    pub tol_sphere_factor: f64,
    pub tol_identity: f64,
    pub tol_orth: f64,
    /// Eigenvalues closer than this (relative above 1) form a multiplet.
    pub multiplet_tol: f64,
    pub eigen_count: usize,
    pub eig_tol: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Largest [`sphere_distance`] compatible with a sphere-like verdict.
    pub sphere_distance_threshold: f64,
    /// Slack allowed in `λ₂(T_r) ≤ λ₂(ℒ_r)`.
    pub comparison_tol: f64,
    /// Eigensolver choice; `None` picks by size.
    pub method: Option<Method>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            tol_sphere_factor: 0.05,
            tol_identity: 0.05,
            tol_orth: 1e-8,
            multiplet_tol: 1e-6,
            eigen_count: 5,
            eig_tol: 1e-8,
            seed: 0x5eed,
            max_iter: 2000,
            sphere_distance_threshold: 1e-3,
            comparison_tol: 1e-8,
            method: None,
        }
    }
}

impl VerifyConfig {
    pub fn solver(&self, pencil: &OperatorPencil) -> SolverOptions {
        SolverOptions {
            tol: self.eig_tol,
            seed: self.seed,
            max_iter: self.max_iter,
            method: self.method,
            shift: Some(pencil.default_shift()),
            block: None,
        }
    }

    pub fn tol_sphere(&self, pencil: &OperatorPencil) -> f64 {
        self.tol_sphere_factor * pencil.spectral_scale()
    }
}

/// Mesh, order-`r` fields and pencil, built once and shared by the checks.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub mesh: TriMesh,
    pub field: CurvatureField,
    pub pencil: OperatorPencil,
}

impl Analysis {
    /// Fails with [`Error::CurvatureNotPositive`] when `r >= 1` and
    /// `H_{r+1}` is not positive everywhere.
    pub fn new(mesh: TriMesh, r: usize) -> Result<Self> {
        let field = build_fields(&CurvatureField::estimate(&mesh)?, r)?;
        let pencil = assemble_pencil(&mesh, &field, r)?;
        Ok(Self { mesh, field, pencil })
    }

    pub fn r(&self) -> usize {
        self.pencil.r()
    }

    pub fn spectrum(&self, config: &VerifyConfig) -> Result<Spectrum> {
        let k = config.eigen_count.min(self.pencil.dim());
        smallest_eigenpairs(
            &self.pencil.operator_matrix(),
            self.pencil.mass(),
            k,
            &config.solver(&self.pencil),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// `|λ₂| ≤ tol_sphere`.
    SphereLike,
    /// `λ₂ < −tol_sphere`.
    StrictlyNegative,
    /// `λ₂ > tol_sphere`; never expected on convex input.
    Violation,
}

pub fn classify(lambda_2: f64, tol_sphere: f64) -> Verdict {
    if lambda_2 > tol_sphere {
        Verdict::Violation
    } else if lambda_2 < -tol_sphere {
        Verdict::StrictlyNegative
    } else {
        Verdict::SphereLike
    }
}

/// Area-weighted `(κ₁ − κ₂)²` plus the variance of `H_1`, both divided by
/// the squared mean of `H_1`; zero exactly on round spheres.
pub fn sphere_distance(mesh: &TriMesh, field: &CurvatureField) -> f64 {
    let areas = mesh.vertex_areas();
    let total: f64 = areas.iter().sum();
    let h1 = field.vertex_mean_curvature(1);
    let mean = areas.iter().zip(&h1).map(|(a, h)| a * h).sum::<f64>() / total;
    let anisotropy = areas
        .iter()
        .zip(field.vertex_kappas())
        .map(|(a, k)| a * (k[0] - k[1]).powi(2))
        .sum::<f64>()
        / total;
    let variance = areas.iter().zip(&h1).map(|(a, h)| a * (h - mean).powi(2)).sum::<f64>() / total;
    (anisotropy + variance) / (mean * mean).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub r: usize,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub method: Method,
    pub seed: u64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    /// Size of the eigenvalue cluster containing `λ₂`.
    pub lambda_2_multiplicity: usize,
    /// Smallest squared `M`-projection of a `λ₂`-cluster eigenvector onto
    /// the span of the mean-free coordinate functions.
    pub coordinate_overlap: f64,
    pub d_sum: f64,
    pub verdict: Verdict,
    pub tol_sphere: f64,
    pub spectral_scale: f64,
    pub sphere_distance: f64,
    pub sphere_distance_threshold: f64,
    /// False when a sphere-like verdict meets a non-round shape.
    pub consistent: bool,
}

fn cluster_of(values: &[f64], index: usize, tol: f64) -> Range<usize> {
    clusters(values, tol)
        .into_iter()
        .find(|c| c.contains(&index))
        .unwrap_or(index..index + 1)
}

/// Squared `M`-norm of the projection of each `M`-unit vector onto the
/// span of the mean-free coordinates; returns the minimum.
fn coordinate_overlap(mesh: &TriMesh, mass: &[f64], vectors: &[Vec<f64>]) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..3 {
        let mut c: Vec<f64> = mesh.vertices().iter().map(|p| p[i]).collect();
        project_mean_zero(mass, &mut c);
        for b in &basis {
            let d = m_inner(mass, &c, b);
            c.iter_mut().zip(b).for_each(|(c, b)| *c -= d * b);
        }
        let norm = m_inner(mass, &c, &c).sqrt();
        if norm > 0.0 {
            c.iter_mut().for_each(|c| *c /= norm);
            basis.push(c);
        }
    }
    vectors
        .iter()
        .map(|x| basis.iter().map(|b| m_inner(mass, x, b).powi(2)).sum::<f64>() / m_inner(mass, x, x))
        .fold(f64::INFINITY, f64::min)
}

fn d_sum(analysis: &Analysis) -> Result<f64> {
    let resolvent = ZeroMeanResolvent::new(&analysis.pencil)?;
    let f = test_functions(&analysis.field, analysis.r())?;
    Ok(d_quantities(&analysis.pencil, &resolvent, &f)?.d_sum)
}

pub fn verify_theorem(analysis: &Analysis, config: &VerifyConfig) -> Result<TheoremReport> {
    theorem_report(analysis, config, analysis.spectrum(config)?)
}

/// Same as [`verify_theorem`] with a spectrum computed by the caller.
pub fn theorem_report(analysis: &Analysis, config: &VerifyConfig, spectrum: Spectrum) -> Result<TheoremReport> {
    if spectrum.len() < 2 {
        return Err(Error::InvalidArgument("need at least two eigenvalues".into()));
    }
    let pencil = &analysis.pencil;
    let tol_sphere = config.tol_sphere(pencil);
    let lambda_2 = spectrum.eigenvalues[1];
    let cluster = cluster_of(&spectrum.eigenvalues, 1, config.multiplet_tol);
    let overlap = coordinate_overlap(&analysis.mesh, pencil.mass(), &spectrum.eigenvectors[cluster.clone()]);
    let verdict = classify(lambda_2, tol_sphere);
    let distance = sphere_distance(&analysis.mesh, &analysis.field);
    Ok(TheoremReport {
        r: analysis.r(),
        lambda_1: spectrum.eigenvalues[0],
        lambda_2,
        lambda_2_multiplicity: cluster.len(),
        coordinate_overlap: overlap,
        d_sum: d_sum(analysis)?,
        verdict,
        tol_sphere,
        spectral_scale: pencil.spectral_scale(),
        sphere_distance: distance,
        sphere_distance_threshold: config.sphere_distance_threshold,
        consistent: verdict != Verdict::SphereLike || distance <= config.sphere_distance_threshold,
        eigenvalues: spectrum.eigenvalues,
        residuals: spectrum.residuals,
        method: spectrum.method,
        seed: spectrum.seed,
    })
}

pub const NORM_CONVENTION: &str = "|A| = sqrt(mean of squared principal curvatures)";

/// `c_r ‖A‖^{r+2}` per vertex with the normalized norm `sqrt(mean κ²)`.
pub fn corollary_potential(field: &CurvatureField, r: usize) -> Result<Vec<f64>> {
    let c = curvalg::c_coefficient(2, r)?;
    Ok(field
        .vertex_shape_norm()
        .into_iter()
        .map(|a| c * a.powi(r as i32 + 2))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct CorollaryReport {
    pub r: usize,
    pub eigenvalues_t: Vec<f64>,
    pub lambda_2_t: f64,
    pub lambda_2_l: f64,
    /// `min_v (c_r‖A‖^{r+2} − W_r²)`.
    pub domination_min_gap: f64,
    pub comparison_tol: f64,
    /// The shape-operator norm is a convention; echoed so readers know which.
    pub norm_convention: &'static str,
    /// `λ₂(T_r) ≤ λ₂(ℒ_r) + comparison_tol`.
    pub holds: bool,
}

/// Builds `T_r` by swapping the potential and compares second eigenvalues;
/// `lambda_2_l` is recomputed when not supplied.
pub fn verify_corollary(
    analysis: &Analysis,
    config: &VerifyConfig,
    lambda_2_l: Option<f64>,
) -> Result<CorollaryReport> {
    let r = analysis.r();
    let potential = corollary_potential(&analysis.field, r)?;
    let w2 = analysis.pencil.w_squared();
    let (vertex, gap) = potential
        .iter()
        .zip(w2)
        .map(|(t, w)| t - w)
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::InvalidArgument("mesh has no vertices".into()))?;
    if gap < -1e-10 * w2[vertex].max(1.0) {
        return Err(Error::Domination { vertex, gap });
    }
    let t = analysis.pencil.with_potential(potential)?;
    let k = config.eigen_count.min(t.dim());
    let spectrum_t = smallest_eigenpairs(&t.operator_matrix(), t.mass(), k, &config.solver(&t))?;
    let lambda_2_l = match lambda_2_l {
        Some(l) => l,
        None => analysis.spectrum(config)?.eigenvalues[1],
    };
    let lambda_2_t = spectrum_t.eigenvalues[1];
    Ok(CorollaryReport {
        r,
        lambda_2_t,
        lambda_2_l,
        domination_min_gap: gap,
        comparison_tol: config.comparison_tol,
        norm_convention: NORM_CONVENTION,
        holds: lambda_2_t <= lambda_2_l + config.comparison_tol,
        eigenvalues_t: spectrum_t.eigenvalues,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub r: usize,
    /// `d_i` for the test functions projected onto `[W]^⊥`.
    pub d: [f64; 3],
    pub f_norms_sq: [f64; 3],
    /// `|∫ f_i W| / (area · max|W f_i|)` after projection.
    pub orthogonality: [f64; 3],
    /// Some `d_i > tol_identity · ‖f_i‖²` with orthogonality ≤ `tol_orth`.
    pub applicable: bool,
    /// 1-based index of the witnessing test function.
    pub witness: Option<usize>,
    pub negative_count: usize,
    /// Applicable implies at least two negative eigenvalues.
    pub holds: bool,
    pub tol_identity: f64,
    pub tol_orth: f64,
}

pub fn lemma_two_negative(
    analysis: &Analysis,
    config: &VerifyConfig,
    spectrum: Option<&Spectrum>,
) -> Result<LemmaReport> {
    let pencil = &analysis.pencil;
    let mut f = test_functions(&analysis.field, analysis.r())?;
    let w = pencil.w();
    for fi in f.iter_mut() {
        project_off_w(pencil.mass(), &w, fi);
    }
    let resolvent = ZeroMeanResolvent::new(pencil)?;
    let q = d_quantities(pencil, &resolvent, &f)?;
    let witness = (0..3)
        .filter(|&i| q.orthogonality[i] <= config.tol_orth && q.d[i] > config.tol_identity * q.f_norms_sq[i])
        .max_by(|&a, &b| q.d[a].total_cmp(&q.d[b]));
    let owned;
    let spectrum = match spectrum {
        Some(s) => s,
        None => {
            owned = analysis.spectrum(config)?;
            &owned
        }
    };
    let negative_count = spectrum.count_below(0.0);
    Ok(LemmaReport {
        r: analysis.r(),
        d: q.d,
        f_norms_sq: q.f_norms_sq,
        orthogonality: q.orthogonality,
        applicable: witness.is_some(),
        witness: witness.map(|i| i + 1),
        negative_count,
        holds: witness.is_none() || negative_count >= 2,
        tol_identity: config.tol_identity,
        tol_orth: config.tol_orth,
    })
}
