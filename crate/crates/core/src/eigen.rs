//! Smallest eigenpairs of symmetric pencils `A x = λ M x` with diagonal
//! positive `M`: shift-invert block subspace iteration, plus a dense path
//! that doubles as the oracle on small problems.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, SkylineCholesky};

/// Largest dimension the dense path accepts.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dense,
    Iterative,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative residual target.
    pub tol: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// `None` picks dense for small problems, iterative otherwise.
    pub method: Option<Method>,
    /// Shift for shift-invert; must lie below the smallest eigenvalue.
    /// Defaults to a Gershgorin bound.
    pub shift: Option<f64>,
    /// Block size; defaults to `max(2k, k + 8)`.
    pub block: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            seed: 0x5eed,
            max_iter: 2000,
            method: None,
            shift: None,
            block: None,
        }
    }
}

/// The `k` smallest eigenpairs, ascending, with `M`-orthonormal vectors.
///
/// `residuals[i] = ‖A x − λ M x‖ / (‖M x‖ · s)` with `s` the largest
/// reported `|λ|` (1 if all vanish).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub method: Method,
    pub seed: u64,
    pub shift: Option<f64>,
    pub iterations: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Index ranges of eigenvalues equal within `tol` (relative above 1).
    pub fn multiplets(&self, tol: f64) -> Vec<Range<usize>> {
        clusters(&self.eigenvalues, tol)
    }

    /// Number of eigenvalues strictly below `threshold`.
    pub fn count_below(&self, threshold: f64) -> usize {
        self.eigenvalues.iter().filter(|l| **l < threshold).count()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// CSV with columns `index,eigenvalue,residual`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,eigenvalue,residual")?;
        for (i, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            writeln!(out, "{},{l:e},{r:e}", i + 1)?;
        }
        Ok(())
    }
}

/// Groups sorted values into runs whose neighbours differ by at most
/// `tol · max(1, |λ|)`.
pub fn clusters(values: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || (values[i] - values[i - 1]).abs() > tol * values[i].abs().max(1.0);
        if split {
            out.push(start..i);
            start = i;
        }
    }
    out
}

fn check_pencil(a: &CsrMatrix, mass: &[f64], k: usize) -> Result<()> {
    if a.dim() != mass.len() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: mass.len(),
        });
    }
    if let Some(i) = mass.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidArgument(format!("mass entry {i} is {}", mass[i])));
    }
    if k == 0 || k > a.dim() {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", a.dim())));
    }
    Ok(())
}

/// `xᵀA x / xᵀM x`.
pub fn rayleigh_quotient(a: &CsrMatrix, mass: &[f64], x: &[f64]) -> Result<f64> {
    if x.len() != a.dim() || mass.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: x.len(),
        });
    }
    let denom: f64 = x.iter().zip(mass).map(|(x, m)| m * x * x).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(a.bilinear(x, x) / denom)
}

fn residuals(a: &CsrMatrix, mass: &[f64], values: &[f64], vectors: &DMatrix<f64>) -> Vec<f64> {
    let s = values.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let s = if s > 0.0 { s } else { 1.0 };
    let ax = a.mul_block(vectors);
    values
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..mass.len() {
                let mx = mass[i] * vectors[(i, j)];
                num += (ax[(i, j)] - l * mx).powi(2);
                den += mx * mx;
            }
            (num / den).sqrt() / s
        })
        .collect()
}

fn into_spectrum(a: &CsrMatrix, mass: &[f64], values: Vec<f64>, vectors: DMatrix<f64>, method: Method) -> Spectrum {
    let residuals = residuals(a, mass, &values, &vectors);
    Spectrum {
        eigenvectors: vectors.column_iter().map(|c| c.iter().copied().collect()).collect(),
        eigenvalues: values,
        residuals,
        method,
        seed: 0,
        shift: None,
        iterations: 0,
    }
}

/// Sorted eigenpairs of a small symmetric matrix, ascending.
fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// All eigenpairs of the pencil through `M^{-1/2} A M^{-1/2}`, ascending.
pub fn dense_eigenpairs(a: &CsrMatrix, mass: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_pencil(a, mass, 1)?;
    if a.dim() > DENSE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dense path limited to dimension {DENSE_LIMIT}, got {}",
            a.dim()
        )));
    }
    let d: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let dense = a.to_dense();
    let s = DMatrix::from_fn(a.dim(), a.dim(), |i, j| d[i] * dense[(i, j)] * d[j]);
    let (values, mut y) = sorted_eigen(s);
    for (i, di) in d.iter().enumerate() {
        y.row_mut(i).scale_mut(*di);
    }
    Ok((values, y))
}

/// The `k` smallest eigenpairs from the dense path.
pub fn dense_smallest(a: &CsrMatrix, mass: &[f64], k: usize) -> Result<Spectrum> {
    check_pencil(a, mass, k)?;
    let (values, vectors) = dense_eigenpairs(a, mass)?;
    Ok(into_spectrum(
        a,
        mass,
        values[..k].to_vec(),
        vectors.columns(0, k).into_owned(),
        Method::Dense,
    ))
}

/// `M`-orthonormalizes the columns in place (two Gram–Schmidt passes);
/// columns that collapse are replaced by fresh random vectors.
pub(crate) fn m_orthonormalize(q: &mut DMatrix<f64>, mass: &[f64], rng: &mut ChaCha8Rng) {
    let n = q.nrows();
    let dot = |x: &DMatrix<f64>, a: usize, y: &DMatrix<f64>, b: usize| -> f64 {
        (0..n).map(|i| mass[i] * x[(i, a)] * y[(i, b)]).sum()
    };
    for j in 0..q.ncols() {
        for attempt in 0..4 {
            let before = dot(q, j, q, j).sqrt();
            for _ in 0..2 {
                for i in 0..j {
                    let c = dot(q, i, q, j);
                    for r in 0..n {
                        q[(r, j)] -= c * q[(r, i)];
                    }
                }
            }
            let after = dot(q, j, q, j).sqrt();
            if after > 1e-10 * before && after > 0.0 {
                q.column_mut(j).scale_mut(1.0 / after);
                break;
            }
            if attempt == 3 {
                // only reachable when j exceeds the dimension
                q.column_mut(j).fill(0.0);
                break;
            }
            for r in 0..n {
                q[(r, j)] = rng.random_range(-1.0..1.0);
            }
        }
    }
}

pub(crate) fn random_block(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
}

/// Ritz data of one subspace-iteration step: values descending, vectors
/// `X` (`M`-orthonormal) and `op(X)`.
pub(crate) struct Ritz {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub images: DMatrix<f64>,
    pub iterations: usize,
}

/// Block subspace iteration for the dominant eigenpairs of an operator
/// that is self-adjoint in the `M` inner product. `converged` receives each
/// iteration's Ritz data and returns per-pair residuals for the top `k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn subspace_iteration(
    mass: &[f64],
    k: usize,
    block: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    mut apply: impl FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    mut converged: impl FnMut(&Ritz) -> Vec<f64>,
) -> Result<Ritz> {
    let n = mass.len();
    let p = block.clamp(k, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = random_block(n, p, &mut rng);
    m_orthonormalize(&mut q, mass, &mut rng);
    let mut last = Vec::new();
    for it in 1..=max_iter {
        let v = apply(&q)?;
        let mut mv = v.clone();
        for (i, m) in mass.iter().enumerate() {
            mv.row_mut(i).scale_mut(*m);
        }
        let (mut values, mut z) = sorted_eigen(q.transpose() * mv);
        values.reverse();
        let z_desc = DMatrix::from_fn(p, p, |r, c| z[(r, p - 1 - c)]);
        z = z_desc;
        let ritz = Ritz {
            values,
            vectors: &q * &z,
            images: &v * &z,
            iterations: it,
        };
        last = converged(&ritz);
        if last.iter().take(k).all(|r| *r <= tol) {
            return Ok(ritz);
        }
        q = ritz.images;
        m_orthonormalize(&mut q, mass, &mut rng);
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residuals: last,
    })
}

/// The `k` smallest eigenpairs of `A x = λ M x`.
pub fn smallest_eigenpairs(a: &CsrMatrix, mass: &[f64], k: usize, opts: &SolverOptions) -> Result<Spectrum> {
    check_pencil(a, mass, k)?;
    let n = a.dim();
    let method = opts
        .method
        .unwrap_or(if n <= 200 { Method::Dense } else { Method::Iterative });
    if method == Method::Dense {
        let mut s = dense_smallest(a, mass, k)?;
        s.seed = opts.seed;
        return Ok(s);
    }
    let shift = match opts.shift {
        Some(s) => s,
        None => {
            let g = a.gershgorin_lower(mass);
            g - 0.1 * g.abs().max(1.0)
        }
    };
    let shifted = a.add_diagonal(mass, -shift);
    // a failed pivot means the shift is not below the spectrum
    let chol = SkylineCholesky::factor(&shifted)?;
    let block = opts.block.unwrap_or((2 * k).max(k + 8)).max(k + 2).min(n);
    let apply = |q: &DMatrix<f64>| {
        let mut mq = q.clone();
        for (i, m) in mass.iter().enumerate() {
            mq.row_mut(i).scale_mut(*m);
        }
        Ok(chol.solve_block(&mq))
    };
    let check = |ritz: &Ritz| {
        let values: Vec<f64> = ritz.values.iter().take(k).map(|t| shift + 1.0 / t).collect();
        residuals(a, mass, &values, &ritz.vectors.columns(0, k).into_owned())
    };
    let ritz = subspace_iteration(mass, k, block, opts.seed, opts.max_iter, opts.tol, apply, check)?;

    // final Rayleigh–Ritz with A itself over the whole block
    let x = ritz.vectors;
    let (values, z) = sorted_eigen(x.transpose() * a.mul_block(&x));
    let refined = &x * z.columns(0, k);
    let mut spectrum = into_spectrum(a, mass, values[..k].to_vec(), refined, Method::Iterative);
    spectrum.seed = opts.seed;
    spectrum.shift = Some(shift);
    spectrum.iterations = ritz.iterations;
    Ok(spectrum)
}

/// Dense eigenvalues of a small symmetric matrix; a convenience oracle.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    sorted_eigen(m.clone()).0
}

/// `xᵀM y` for vertex vectors.
pub fn m_inner(mass: &[f64], x: &[f64], y: &[f64]) -> f64 {
    mass.iter().zip(x).zip(y).map(|((m, x), y)| m * x * y).sum()
}
