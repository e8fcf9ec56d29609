//! Numerical checks of the geometric identities behind the eigenvalue
//! bound: the position identity, Minkowski's formula, the test functions
//! `f_i` and the quantities `d_i`, and the resolvent bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assemble::OperatorPencil;
use crate::curvalg;
use crate::curvature::CurvatureField;
use crate::eigen::{m_inner, smallest_eigenpairs, Method, SolverOptions};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::sparse::{GroundedSolver, SkylineCholesky};

/// Removes the `M`-weighted mean.
pub fn project_mean_zero(mass: &[f64], x: &mut [f64]) {
    let mean = m_inner(mass, x, &vec![1.0; x.len()]) / mass.iter().sum::<f64>();
    x.iter_mut().for_each(|v| *v -= mean);
}

/// Inverse of `K_r` on mean-zero functions: the right-hand side is made
/// compatible, the singular system is solved with one pinned vertex and
/// the result is re-projected.
pub struct ZeroMeanResolvent {
    solver: GroundedSolver,
    mass: Vec<f64>,
}

impl ZeroMeanResolvent {
    pub fn new(pencil: &OperatorPencil) -> Result<Self> {
        let solver = GroundedSolver::new(pencil.stiffness())?;
        if solver.components().1 != 1 {
            return Err(Error::InvalidArgument(format!(
                "mean-zero resolvent needs a connected mesh, found {} components",
                solver.components().1
            )));
        }
        Ok(Self {
            solver,
            mass: pencil.mass().to_vec(),
        })
    }

    /// `R₀` applied to a weak right-hand side `b` (already multiplied by `M`).
    pub fn solve_weak(&self, b: &[f64]) -> Vec<f64> {
        let total: f64 = b.iter().sum();
        let area: f64 = self.mass.iter().sum();
        let rhs: Vec<f64> = b.iter().zip(&self.mass).map(|(b, m)| b - m * total / area).collect();
        let mut y = self.solver.solve(&rhs);
        project_mean_zero(&self.mass, &mut y);
        y
    }

    /// `R₀ g` for a vertex function `g`.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let b: Vec<f64> = g.iter().zip(&self.mass).map(|(g, m)| g * m).collect();
        self.solve_weak(&b)
    }
}

fn coordinates(mesh: &TriMesh) -> [Vec<f64>; 3] {
    std::array::from_fn(|i| mesh.vertices().iter().map(|p| p[i]).collect())
}

fn m_inv_norm(mass: &[f64], b: &[f64]) -> f64 {
    b.iter().zip(mass).map(|(b, m)| b * b / m).sum::<f64>().sqrt()
}

/// `c_r H_{r+1} N_i` at every vertex.
fn normal_source(field: &CurvatureField, r: usize) -> Result<[Vec<f64>; 3]> {
    let order = field.require_order(r)?;
    let c = curvalg::c_coefficient(2, r)?;
    let normals = field.vertex_normals();
    Ok(std::array::from_fn(|i| {
        order.h_next.iter().zip(normals).map(|(h, n)| c * h * n[i]).collect()
    }))
}

/// Relative residuals `‖K φ_i − M c_r H_{r+1} N_i‖_{M⁻¹} / ‖M c_r H_{r+1} N_i‖_{M⁻¹}`.
pub fn lr_position_residual(mesh: &TriMesh, field: &CurvatureField, pencil: &OperatorPencil) -> Result<[f64; 3]> {
    let source = normal_source(field, pencil.r())?;
    let mass = pencil.mass();
    let coords = coordinates(mesh);
    let mut out = [0.0; 3];
    for i in 0..3 {
        let k_phi = pencil.stiffness().mul_vec(&coords[i]);
        let rhs: Vec<f64> = source[i].iter().zip(mass).map(|(s, m)| s * m).collect();
        let diff: Vec<f64> = k_phi.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        out[i] = m_inv_norm(mass, &diff) / m_inv_norm(mass, &rhs);
    }
    Ok(out)
}

/// Relative gap in `∫H_r = ∫H_{r+1}⟨φ − φ̄, N⟩` by vertex quadrature.
pub fn minkowski_residual(mesh: &TriMesh, field: &CurvatureField, r: usize) -> Result<f64> {
    let areas = mesh.vertex_areas();
    let h_r = field.vertex_mean_curvature(r);
    let h_next = field.vertex_mean_curvature(r + 1);
    let total: f64 = areas.iter().sum();
    let centroid = mesh
        .vertices()
        .iter()
        .zip(areas)
        .map(|(p, a)| p * *a)
        .sum::<crate::mesh::Point>()
        / total;
    let lhs: f64 = areas.iter().zip(&h_r).map(|(a, h)| a * h).sum();
    if !(lhs > 0.0) {
        return Err(Error::Normalization(format!("integral of H_{r} is {lhs}")));
    }
    let rhs: f64 = (0..mesh.vertex_count())
        .map(|v| areas[v] * h_next[v] * (mesh.vertices()[v] - centroid).dot(&field.vertex_normals()[v]))
        .sum();
    Ok((lhs - rhs).abs() / lhs)
}

/// `f_i = sqrt(c_r H_{r+1}^{r/(r+1)}) N_i`, so that `W_r f_i = c_r H_{r+1} N_i`.
pub fn test_functions(field: &CurvatureField, r: usize) -> Result<[Vec<f64>; 3]> {
    let order = field.require_order(r)?;
    if r >= 1 && !order.h_next_positive {
        let (v, h) = order
            .h_next
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(v, h)| (v, *h))
            .unwrap_or((0, 0.0));
        return Err(Error::CurvatureNotPositive {
            order: r + 1,
            value: h,
            vertex: Some(v),
        });
    }
    let c = curvalg::c_coefficient(2, r)?;
    let exponent = r as f64 / (r as f64 + 1.0);
    let amplitude: Vec<f64> = order
        .h_next
        .iter()
        .map(|h| {
            if r == 0 {
                c.sqrt()
            } else {
                (c * h.powf(exponent)).sqrt()
            }
        })
        .collect();
    let normals = field.vertex_normals();
    Ok(std::array::from_fn(|i| {
        amplitude.iter().zip(normals).map(|(a, n)| a * n[i]).collect()
    }))
}

/// `d_i = ⟨R₀(W f_i), W f_i⟩ − ‖f_i‖²` and the orthogonality `∫ f_i W`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DQuantities {
    pub d: [f64; 3],
    pub d_sum: f64,
    /// `‖f_i‖²`.
    pub f_norms_sq: [f64; 3],
    /// `|∫ f_i W| / (area · max|W f_i|)`.
    pub orthogonality: [f64; 3],
}

pub fn d_quantities(pencil: &OperatorPencil, resolvent: &ZeroMeanResolvent, f: &[Vec<f64>; 3]) -> Result<DQuantities> {
    let mass = pencil.mass();
    let w = pencil.w();
    let area: f64 = mass.iter().sum();
    let mut d = [0.0; 3];
    let mut f_norms_sq = [0.0; 3];
    let mut orthogonality = [0.0; 3];
    for i in 0..3 {
        if f[i].len() != pencil.dim() {
            return Err(Error::DimensionMismatch {
                expected: pencil.dim(),
                found: f[i].len(),
            });
        }
        let wf: Vec<f64> = f[i].iter().zip(&w).map(|(f, w)| f * w).collect();
        let y = resolvent.apply(&wf);
        f_norms_sq[i] = m_inner(mass, &f[i], &f[i]);
        d[i] = m_inner(mass, &y, &wf) - f_norms_sq[i];
        let peak = wf.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let integral: f64 = m_inner(mass, &wf, &vec![1.0; wf.len()]);
        orthogonality[i] = if peak > 0.0 {
            integral.abs() / (area * peak)
        } else {
            0.0
        };
    }
    Ok(DQuantities {
        d,
        d_sum: d.iter().sum(),
        f_norms_sq,
        orthogonality,
    })
}

/// `M`-orthogonal projection onto `[W]^⊥`.
pub fn project_off_w(mass: &[f64], w: &[f64], g: &mut [f64]) {
    let ww = m_inner(mass, w, w);
    if ww > 0.0 {
        let c = m_inner(mass, g, w) / ww;
        g.iter_mut().zip(w).for_each(|(g, w)| *g -= c * w);
    }
}

/// Smallest nonzero eigenvalue of `(K_r, M)`, i.e. the bottom of the
/// spectrum on mean-zero functions.
pub fn first_nonzero_eigenvalue(pencil: &OperatorPencil, seed: u64) -> Result<f64> {
    let opts = SolverOptions {
        seed,
        shift: Some(-0.1 * pencil.spectral_scale()),
        method: Some(if pencil.dim() <= 200 {
            Method::Dense
        } else {
            Method::Iterative
        }),
        ..Default::default()
    };
    let s = smallest_eigenpairs(pencil.stiffness(), pencil.mass(), 2.min(pencil.dim()), &opts)?;
    s.eigenvalues
        .get(1)
        .copied()
        .ok_or_else(|| Error::InvalidArgument("mesh too small for a nonzero eigenvalue".into()))
}

/// Outcome of the randomized resolvent bound `‖R_μ g‖ ≤ ‖g‖/(λ₁⊥ + μ)`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ResolventCheck {
    pub mu: f64,
    pub lambda1_perp: f64,
    pub trials: usize,
    pub seed: u64,
    /// Smallest relative slack `1 − ‖R_μ g‖ (λ₁⊥ + μ)/‖g‖`.
    pub min_slack: f64,
    pub worst_trial: usize,
}

/// Checks the bound on `trials` random mean-zero vectors. `R_μ` is the
/// inverse of `K_r + μM` applied to `M g`.
pub fn resolvent_bound_check(pencil: &OperatorPencil, mu: f64, trials: usize, seed: u64) -> Result<ResolventCheck> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    let lambda1_perp = first_nonzero_eigenvalue(pencil, seed)?;
    let chol = SkylineCholesky::factor(&pencil.stiffness().add_diagonal(pencil.mass(), mu))?;
    let mass = pencil.mass();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_slack = f64::INFINITY;
    let mut worst_trial = 0;
    for t in 0..trials {
        let mut g: Vec<f64> = (0..pencil.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        project_mean_zero(mass, &mut g);
        let slack = resolvent_slack(&chol, mass, &g, lambda1_perp + mu);
        if slack < min_slack {
            min_slack = slack;
            worst_trial = t;
        }
    }
    Ok(ResolventCheck {
        mu,
        lambda1_perp,
        trials,
        seed,
        min_slack,
        worst_trial,
    })
}

/// `1 − ‖R g‖_M · denom / ‖g‖_M`.
pub(crate) fn resolvent_slack(chol: &SkylineCholesky, mass: &[f64], g: &[f64], denom: f64) -> f64 {
    let b: Vec<f64> = g.iter().zip(mass).map(|(g, m)| g * m).collect();
    let y = chol.solve(&b);
    1.0 - m_inner(mass, &y, &y).sqrt() * denom / m_inner(mass, g, g).sqrt()
}

/// Both sides of `Σ⟨R₀(W f_i), W f_i⟩ = Σ φ̃_iᵀ K φ̃_i = c_r ∫H_r`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ChainReport {
    /// `Σ φ̃ᵀKφ̃` over the mean-zero coordinates.
    pub dirichlet: f64,
    /// `Σ⟨R₀(Kφ_i), Kφ_i⟩` with the discrete source `Kφ_i`; equals
    /// `dirichlet` up to round-off.
    pub discrete_source: f64,
    pub discrete_gap: f64,
    /// `Σ⟨R₀(W f_i), W f_i⟩` with the pointwise source `c_r H_{r+1} N_i`.
    pub pointwise_source: f64,
    pub pointwise_gap: f64,
    /// `c_r ∫H_r`.
    pub minkowski: f64,
    pub minkowski_gap: f64,
}

pub fn chain_identity(
    mesh: &TriMesh,
    field: &CurvatureField,
    pencil: &OperatorPencil,
    resolvent: &ZeroMeanResolvent,
) -> Result<ChainReport> {
    let r = pencil.r();
    let mass = pencil.mass();
    let k = pencil.stiffness();
    let mut dirichlet = 0.0;
    let mut discrete_source = 0.0;
    for mut phi in coordinates(mesh) {
        project_mean_zero(mass, &mut phi);
        let k_phi = k.mul_vec(&phi);
        dirichlet += k_phi.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
        let y = resolvent.solve_weak(&k_phi);
        discrete_source += y.iter().zip(&k_phi).map(|(a, b)| a * b).sum::<f64>();
    }
    let source = normal_source(field, r)?;
    let pointwise_source: f64 = source.iter().map(|s| m_inner(mass, &resolvent.apply(s), s)).sum();
    let c = curvalg::c_coefficient(2, r)?;
    let minkowski = c * mass
        .iter()
        .zip(field.vertex_mean_curvature(r))
        .map(|(a, h)| a * h)
        .sum::<f64>();
    let rel = |a: f64| (a - dirichlet).abs() / dirichlet.abs();
    Ok(ChainReport {
        dirichlet,
        discrete_source,
        discrete_gap: rel(discrete_source),
        pointwise_source,
        pointwise_gap: rel(pointwise_source),
        minkowski,
        minkowski_gap: rel(minkowski),
    })
}

/// Everything this module checks, for one mesh and order.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IdentityReport {
    pub r: usize,
    pub lr_position_residual: [f64; 3],
    pub minkowski_residual: f64,
    pub orthogonality: [f64; 3],
    pub d: [f64; 3],
    pub d_sum: f64,
    pub f_norms_sq: [f64; 3],
    /// Min relative slack of the resolvent bound over the random trials.
    pub resolvent_bound_margin: f64,
    pub resolvent: ResolventCheck,
    pub chain: ChainReport,
    pub tol_identity: f64,
    pub tol_orth: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IdentityOptions {
    pub mu: f64,
    pub trials: usize,
    pub seed: u64,
    pub tol_identity: f64,
    pub tol_orth: f64,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        Self {
            mu: 1.0,
            trials: 100,
            seed: 0x5eed,
            tol_identity: 0.05,
            tol_orth: 1e-8,
        }
    }
}

pub fn identity_report(
    mesh: &TriMesh,
    field: &CurvatureField,
    pencil: &OperatorPencil,
    opts: &IdentityOptions,
) -> Result<IdentityReport> {
    let r = pencil.r();
    let resolvent = ZeroMeanResolvent::new(pencil)?;
    let f = test_functions(field, r)?;
    let d = d_quantities(pencil, &resolvent, &f)?;
    let resolvent_check = resolvent_bound_check(pencil, opts.mu, opts.trials, opts.seed)?;
    Ok(IdentityReport {
        r,
        lr_position_residual: lr_position_residual(mesh, field, pencil)?,
        minkowski_residual: minkowski_residual(mesh, field, r)?,
        orthogonality: d.orthogonality,
        d: d.d,
        d_sum: d.d_sum,
        f_norms_sq: d.f_norms_sq,
        resolvent_bound_margin: resolvent_check.min_slack,
        resolvent: resolvent_check,
        chain: chain_identity(mesh, field, pencil, &resolvent)?,
        tol_identity: opts.tol_identity,
        tol_orth: opts.tol_orth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::assemble_pencil;
    use crate::curvature::build_fields;
    use crate::eigen::dense_eigenpairs;
    use crate::surfaces::{generate, AnalyticSurface};

    fn setup(s: &AnalyticSurface, k: u32, r: usize) -> (TriMesh, CurvatureField, OperatorPencil) {
        let m = generate(s, k).unwrap();
        let f = build_fields(&CurvatureField::estimate(&m).unwrap(), r).unwrap();
        let p = assemble_pencil(&m, &f, r).unwrap();
        (m, f, p)
    }

    const SPHERE: AnalyticSurface = AnalyticSurface::Sphere { radius: 1.0 };
    const ELLIPSOID: AnalyticSurface = AnalyticSurface::Ellipsoid { a: 2.0, b: 1.0, c: 1.0 };

    #[test]
    fn position_identity_on_sphere() {
        for r in [0, 1] {
            let (m, f, p) = setup(&SPHERE, 4, r);
            let res = lr_position_residual(&m, &f, &p).unwrap();
            assert!(res.iter().all(|x| *x <= 0.05), "{res:?}");
        }
        let (m, f, p) = setup(&ELLIPSOID, 3, 0);
        let coarse = lr_position_residual(&m, &f, &p).unwrap();
        let (m, f, p) = setup(&ELLIPSOID, 4, 0);
        let fine = lr_position_residual(&m, &f, &p).unwrap();
        for i in 0..3 {
            assert!(fine[i] <= 0.6 * coarse[i], "{coarse:?} -> {fine:?}");
        }
    }

    #[test]
    fn minkowski_examples() {
        let (m, f, _) = setup(&SPHERE, 4, 0);
        assert!(minkowski_residual(&m, &f, 0).unwrap() <= 0.01);
        let (m, f, _) = setup(&AnalyticSurface::Sphere { radius: 2.0 }, 4, 1);
        assert!(minkowski_residual(&m, &f, 1).unwrap() <= 0.02);
        let h1: f64 = m
            .vertex_areas()
            .iter()
            .zip(f.vertex_mean_curvature(1))
            .map(|(a, h)| a * h)
            .sum();
        assert!((h1 - 8.0 * std::f64::consts::PI).abs() / h1 < 0.01);
        let (m, f, _) = setup(&ELLIPSOID, 4, 0);
        assert!(minkowski_residual(&m, &f, 0).unwrap() <= 0.02);
    }

    #[test]
    fn test_function_identity() {
        for r in [0, 1] {
            let (_, f, p) = setup(&ELLIPSOID, 3, r);
            let fs = test_functions(&f, r).unwrap();
            let source = normal_source(&f, r).unwrap();
            let w = p.w();
            for i in 0..3 {
                for v in 0..p.dim() {
                    let lhs = w[v] * fs[i][v];
                    assert!((lhs - source[i][v]).abs() <= 1e-12 * source[i][v].abs().max(1.0));
                }
            }
        }
        let (_, f, _) = setup(&SPHERE, 3, 0);
        let fs = test_functions(&f, 0).unwrap();
        for (v, n) in f.vertex_normals().iter().enumerate() {
            assert!((fs[2][v] - 2f64.sqrt() * n[2]).abs() < 1e-14);
        }
    }

    #[test]
    fn d_on_sphere_and_ellipsoid() {
        for r in [0, 1] {
            let (_, f, p) = setup(&SPHERE, 4, r);
            let res = ZeroMeanResolvent::new(&p).unwrap();
            let d = d_quantities(&p, &res, &test_functions(&f, r).unwrap()).unwrap();
            for i in 0..3 {
                assert!(d.d[i].abs() <= 0.05 * d.f_norms_sq[i], "{d:?}");
            }
        }
        // for r = 0 the sum vanishes in the limit; only single d_i are positive
        let (_, f, p) = setup(&ELLIPSOID, 3, 0);
        let res = ZeroMeanResolvent::new(&p).unwrap();
        let d = d_quantities(&p, &res, &test_functions(&f, 0).unwrap()).unwrap();
        assert!(d.d.iter().any(|d| *d > 0.0));
        assert!(d.d_sum >= -0.05 * d.f_norms_sq.iter().sum::<f64>());
        let (_, f, p) = setup(&ELLIPSOID, 3, 1);
        let res = ZeroMeanResolvent::new(&p).unwrap();
        let d = d_quantities(&p, &res, &test_functions(&f, 1).unwrap()).unwrap();
        assert!(d.d_sum > 0.0);
    }

    #[test]
    fn zero_mean_resolvent_against_dense_oracle() {
        let (_, _, p) = setup(&ELLIPSOID, 1, 0);
        let res = ZeroMeanResolvent::new(&p).unwrap();
        let (values, vectors) = dense_eigenpairs(p.stiffness(), p.mass()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = res.apply(&g);
        // spectral oracle: Σ_{k>0} ⟨g, x_k⟩_M / λ_k · x_k
        let mut oracle = vec![0.0; p.dim()];
        for k in 1..p.dim() {
            let x: Vec<f64> = vectors.column(k).iter().copied().collect();
            let c = m_inner(p.mass(), &g, &x) / values[k];
            oracle.iter_mut().zip(&x).for_each(|(o, x)| *o += c * x);
        }
        for (a, b) in y.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn resolvent_bound() {
        let (_, _, p) = setup(&SPHERE, 3, 0);
        let check = resolvent_bound_check(&p, 1.0, 100, 5).unwrap();
        assert!(check.min_slack >= -1e-8);
        assert!((check.lambda1_perp - 2.0).abs() < 0.05);
        // equality along the first eigenvector, strict slack further up
        let opts = SolverOptions {
            shift: Some(-0.2),
            method: Some(Method::Iterative),
            ..Default::default()
        };
        let s = smallest_eigenpairs(p.stiffness(), p.mass(), 6, &opts).unwrap();
        let chol = SkylineCholesky::factor(&p.stiffness().add_diagonal(p.mass(), 1.0)).unwrap();
        let eq = resolvent_slack(&chol, p.mass(), &s.eigenvectors[1], s.eigenvalues[1] + 1.0);
        assert!(eq.abs() < 1e-9);
        let strict = resolvent_slack(&chol, p.mass(), &s.eigenvectors[5], s.eigenvalues[1] + 1.0);
        assert!(strict > 0.1);
        assert!(resolvent_bound_check(&p, 0.0, 1, 0).is_err());
    }

    #[test]
    fn chain_identity_discrete_and_pointwise() {
        for (s, r) in [(SPHERE, 0), (SPHERE, 1), (ELLIPSOID, 0), (ELLIPSOID, 1)] {
            let (m, f, p) = setup(&s, 3, r);
            let res = ZeroMeanResolvent::new(&p).unwrap();
            let c = chain_identity(&m, &f, &p, &res).unwrap();
            assert!(c.discrete_gap <= 1e-8, "{c:?}");
            assert!(c.minkowski_gap <= 0.03, "{c:?}");
        }
    }
}
