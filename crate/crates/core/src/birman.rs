//! The discrete Birman–Schwinger kernel `K_μ = W (K_r + μM)⁻¹ M W`, its top
//! eigenvalues as functions of `μ`, and the unit crossings that locate the
//! negative eigenvalues of the pencil.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assemble::OperatorPencil;
use crate::eigen::{self, m_inner, smallest_eigenpairs, Ritz, SolverOptions};
use crate::error::{Error, Result};
use crate::identities::{first_nonzero_eigenvalue, project_mean_zero, project_off_w, ZeroMeanResolvent};
use crate::sparse::SkylineCholesky;

/// Subspace the kernel acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    /// Whole space; needs `μ > 0`.
    Full,
    /// Resolvent taken on mean-zero functions (`μ = 0` allowed).
    MeanZero,
    /// Mean-zero resolvent, and input and output projected onto `[W]^⊥`.
    MeanZeroPerpW,
}

enum Inner {
    Shifted(SkylineCholesky),
    Zero(ZeroMeanResolvent),
}

/// `K_μ` with a factored inner solve, reusable across applications.
pub struct KernelOperator {
    mu: f64,
    restriction: Restriction,
    w: Vec<f64>,
    mass: Vec<f64>,
    inner: Inner,
}

impl KernelOperator {
    pub fn new(pencil: &OperatorPencil, mu: f64, restriction: Restriction) -> Result<Self> {
        let ok = match restriction {
            Restriction::Full => mu > 0.0,
            _ => mu >= 0.0,
        };
        if !(ok && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mu = {mu} not admissible for the {restriction:?} kernel"
            )));
        }
        let inner = if mu > 0.0 {
            Inner::Shifted(SkylineCholesky::factor(
                &pencil.stiffness().add_diagonal(pencil.mass(), mu),
            )?)
        } else {
            Inner::Zero(ZeroMeanResolvent::new(pencil)?)
        };
        Ok(Self {
            mu,
            restriction,
            w: pencil.w(),
            mass: pencil.mass().to_vec(),
            inner,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: g.len(),
            });
        }
        let perp = self.restriction == Restriction::MeanZeroPerpW;
        let mut g = g.to_vec();
        if perp {
            project_off_w(&self.mass, &self.w, &mut g);
        }
        let b: Vec<f64> = (0..g.len()).map(|i| self.mass[i] * self.w[i] * g[i]).collect();
        let mut y = match (&self.inner, self.restriction) {
            (Inner::Shifted(c), Restriction::Full) => c.solve(&b),
            (Inner::Shifted(c), _) => {
                let total: f64 = b.iter().sum();
                let area: f64 = self.mass.iter().sum();
                let b: Vec<f64> = b.iter().zip(&self.mass).map(|(b, m)| b - m * total / area).collect();
                let mut y = c.solve(&b);
                project_mean_zero(&self.mass, &mut y);
                y
            }
            (Inner::Zero(r), _) => r.solve_weak(&b),
        };
        y.iter_mut().zip(&self.w).for_each(|(y, w)| *y *= w);
        if perp {
            project_off_w(&self.mass, &self.w, &mut y);
        }
        Ok(y)
    }

    fn apply_block(&self, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cols: Vec<Vec<f64>> = (0..q.ncols())
            .into_par_iter()
            .map(|j| self.apply(q.column(j).as_slice()))
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| cols[j][i]))
    }

    /// The `k` largest eigenvalues, descending, by block subspace iteration
    /// in the `M` inner product.
    pub fn top_eigenvalues(&self, k: usize, seed: u64, tol: f64) -> Result<Vec<f64>> {
        let n = self.dim();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("k = {k} outside 1..={n}")));
        }
        let block = (2 * k).max(k + 8).min(n);
        let mass = self.mass.clone();
        let check = |ritz: &Ritz| {
            let scale = ritz.values[0].abs().max(f64::MIN_POSITIVE);
            (0..k)
                .map(|j| {
                    let mut num = 0.0;
                    for i in 0..n {
                        let d = ritz.images[(i, j)] - ritz.values[j] * ritz.vectors[(i, j)];
                        num += mass[i] * d * d;
                    }
                    num.sqrt() / scale
                })
                .collect()
        };
        let ritz = eigen::subspace_iteration(&self.mass, k, block, seed, 5000, tol, |q| self.apply_block(q), check)?;
        Ok(ritz.values[..k].to_vec())
    }
}

/// `K_μ g` on the full space.
pub fn apply_k_mu(pencil: &OperatorPencil, mu: f64, g: &[f64]) -> Result<Vec<f64>> {
    KernelOperator::new(pencil, mu, Restriction::Full)?.apply(g)
}

/// The `k` largest eigenvalues of the full-space `K_μ`.
pub fn top_eigenvalues_k(pencil: &OperatorPencil, mu: f64, k: usize, seed: u64) -> Result<Vec<f64>> {
    KernelOperator::new(pencil, mu, Restriction::Full)?.top_eigenvalues(k, seed, 1e-10)
}

/// All eigenvalues of `K_μ`, descending, built densely from the spectral
/// decomposition of `(K_r, M)`; independent of the sparse solves.
pub fn dense_kernel_eigenvalues(pencil: &OperatorPencil, mu: f64, restriction: Restriction) -> Result<Vec<f64>> {
    let (values, vectors) = eigen::dense_eigenpairs(pencil.stiffness(), pencil.mass())?;
    let n = pencil.dim();
    let sqrt_m: Vec<f64> = pencil.mass().iter().map(|m| m.sqrt()).collect();
    // symmetric coordinates: u = M^{1/2} x
    let u = DMatrix::from_fn(n, n, |i, j| sqrt_m[i] * vectors[(i, j)]);
    let mut resolvent = DMatrix::zeros(n, n);
    for (k, lambda) in values.iter().enumerate() {
        let weight = if k == 0 {
            match restriction {
                Restriction::Full if mu > 0.0 => 1.0 / mu,
                Restriction::Full => return Err(Error::InvalidArgument("full kernel needs mu > 0".into())),
                _ => continue,
            }
        } else {
            1.0 / (lambda + mu)
        };
        let col = u.column(k);
        resolvent += weight * col * col.transpose();
    }
    let w = pencil.w();
    let mut kernel = DMatrix::from_fn(n, n, |i, j| w[i] * resolvent[(i, j)] * w[j]);
    if restriction == Restriction::MeanZeroPerpW {
        let wu: Vec<f64> = (0..n).map(|i| sqrt_m[i] * w[i]).collect();
        let norm = wu.iter().map(|x| x * x).sum::<f64>().sqrt();
        let p = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - wu[i] * wu[j] / (norm * norm));
        kernel = &p * kernel * &p;
    }
    let mut out = eigen::symmetric_eigenvalues(&kernel);
    out.reverse();
    Ok(out)
}

/// Geometric grid of `steps` points from `lo` to `hi`.
pub fn geometric_grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && steps >= 2 && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < mu_min < mu_max and steps >= 2, got [{lo}, {hi}] with {steps}"
        )));
    }
    let ratio = (hi / lo).ln() / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            if i + 1 == steps {
                hi
            } else {
                lo * (ratio * i as f64).exp()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanOptions {
    /// Defaults to `1e-3 · mean W²`.
    pub mu_min: Option<f64>,
    /// Defaults to `10 · max W²`.
    pub mu_max: Option<f64>,
    pub steps: usize,
    /// Number of kernel eigenvalue branches tracked.
    pub k: usize,
    pub seed: u64,
    /// Residual tolerance of the kernel eigensolves.
    pub eig_tol: f64,
    /// Target `|t − 1|` at a crossing.
    pub crossing_tol: f64,
    /// Relative `μ` tolerance for a crossing to count as matched.
    pub match_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            mu_min: None,
            mu_max: None,
            steps: 32,
            k: 4,
            seed: 0x5eed,
            eig_tol: 1e-11,
            crossing_tol: 1e-8,
            match_tol: 1e-5,
        }
    }
}

/// A `μ₀` where kernel branch `branch` (1-based) equals one.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Crossing {
    pub branch: usize,
    pub mu: f64,
    pub kernel_eigenvalue: f64,
    /// The `branch`-th smallest pencil eigenvalue, expected to be `−μ₀`.
    pub matched_eigenvalue: f64,
    pub relative_error: f64,
    pub matched: bool,
}

/// Kernel bounds at one grid point.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BoundPoint {
    pub mu: f64,
    pub top_full: f64,
    /// `max W² / μ`.
    pub full_bound: f64,
    pub top_mean_zero: f64,
    /// `max W² / (λ₁⊥ + μ)`.
    pub mean_zero_bound: f64,
    /// Smallest relative slack of the two.
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BSScanResult {
    pub r: usize,
    pub seed: u64,
    pub mu_grid: Vec<f64>,
    /// `top_eigenvalues[i][j]`: `j`-th largest eigenvalue at `mu_grid[i]`.
    pub top_eigenvalues: Vec<Vec<f64>>,
    pub crossings: Vec<Crossing>,
    pub bound_check: Vec<BoundPoint>,
    pub lambda1_perp: f64,
    pub max_w_squared: f64,
    /// Smallest pencil eigenvalues used for matching.
    pub pencil_eigenvalues: Vec<f64>,
    /// Pencil eigenvalues in `(−μ_max, −μ_min)`.
    pub negative_in_window: usize,
    pub counts_agree: bool,
    pub all_matched: bool,
    pub monotone: bool,
    pub warnings: Vec<String>,
}

impl BSScanResult {
    /// CSV with columns `mu,top_1..top_k`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let k = self.top_eigenvalues.first().map_or(0, Vec::len);
        let header: Vec<String> = std::iter::once("mu".to_string())
            .chain((1..=k).map(|j| format!("top_{j}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (mu, row) in self.mu_grid.iter().zip(&self.top_eigenvalues) {
            let cells: Vec<String> = std::iter::once(format!("{mu:e}"))
                .chain(row.iter().map(|t| format!("{t:e}")))
                .collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn min_bound_slack(&self) -> f64 {
        self.bound_check.iter().map(|b| b.slack).fold(f64::INFINITY, f64::min)
    }
}

fn relative_slack(value: f64, bound: f64) -> f64 {
    (bound - value) / bound.abs().max(f64::MIN_POSITIVE)
}

/// Solves `t_j(μ) = 1` in `log μ` by the Illinois variant of regula falsi,
/// starting from a bracket with `t_j(lo) > 1 >= t_j(hi)`.
fn locate_crossing(
    pencil: &OperatorPencil,
    branch: usize,
    (a, mut fa): (f64, f64),
    (b, mut fb): (f64, f64),
    opts: &ScanOptions,
) -> Result<(f64, f64)> {
    let eval = |s: f64| -> Result<f64> {
        let t = KernelOperator::new(pencil, s.exp(), Restriction::Full)?.top_eigenvalues(
            branch + 1,
            opts.seed,
            opts.eig_tol,
        )?;
        Ok(t[branch] - 1.0)
    };
    let (mut a_s, mut b_s) = (a.ln(), b.ln());
    let mut side = 0;
    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    for _ in 0..200 {
        if best.1.abs() <= opts.crossing_tol {
            break;
        }
        let mut s = (a_s * fb - b_s * fa) / (fb - fa);
        if !(s > a_s.min(b_s) && s < a_s.max(b_s)) {
            s = 0.5 * (a_s + b_s);
        }
        let fs = eval(s)?;
        if fs.abs() < best.1.abs() {
            best = (s.exp(), fs);
        }
        if (fs > 0.0) == (fa > 0.0) {
            a_s = s;
            fa = fs;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b_s = s;
            fb = fs;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if (b_s - a_s).abs() < 1e-15 {
            break;
        }
    }
    Ok((best.0, best.1 + 1.0))
}

/// Scans the top `k` kernel eigenvalues over a geometric `μ` grid, locates
/// every unit crossing and matches it against the pencil spectrum.
pub fn scan_crossings(pencil: &OperatorPencil, opts: &ScanOptions) -> Result<BSScanResult> {
    let max_w2 = -pencil.lower_bound();
    let mu_min = opts.mu_min.unwrap_or(1e-3 * pencil.spectral_scale());
    let mu_max = opts.mu_max.unwrap_or(10.0 * max_w2);
    let grid = geometric_grid(mu_min, mu_max, opts.steps)?;
    let k = opts.k.clamp(1, pencil.dim());
    let lambda1_perp = first_nonzero_eigenvalue(pencil, opts.seed)?;

    let per_mu: Vec<(Vec<f64>, BoundPoint)> = grid
        .par_iter()
        .map(|&mu| {
            let top =
                KernelOperator::new(pencil, mu, Restriction::Full)?.top_eigenvalues(k, opts.seed, opts.eig_tol)?;
            let top_mz =
                KernelOperator::new(pencil, mu, Restriction::MeanZero)?.top_eigenvalues(1, opts.seed, opts.eig_tol)?[0];
            let full_bound = max_w2 / mu;
            let mean_zero_bound = max_w2 / (lambda1_perp + mu);
            let slack = relative_slack(top[0], full_bound).min(relative_slack(top_mz, mean_zero_bound));
            let point = BoundPoint {
                mu,
                top_full: top[0],
                full_bound,
                top_mean_zero: top_mz,
                mean_zero_bound,
                slack,
            };
            Ok((top, point))
        })
        .collect::<Result<_>>()?;
    let (top_eigenvalues, bound_check): (Vec<_>, Vec<_>) = per_mu.into_iter().unzip();

    let mut warnings = Vec::new();
    let monotone = (0..k).all(|j| {
        top_eigenvalues
            .windows(2)
            .all(|w| w[1][j] <= w[0][j] * (1.0 + 1e-9) + 1e-12)
    });
    if !monotone {
        warnings.push("a kernel branch increased along the grid".into());
    }

    // brackets per branch: ordered branches are monotone, so at most one
    let mut brackets = Vec::new();
    for j in 0..k {
        if let Some(i) = (0..grid.len() - 1).find(|&i| top_eigenvalues[i][j] > 1.0 && top_eigenvalues[i + 1][j] <= 1.0)
        {
            brackets.push((j, i));
        } else if top_eigenvalues[grid.len() - 1][j] > 1.0 {
            warnings.push(format!("branch {} stays above 1 up to mu_max = {mu_max:e}", j + 1));
        }
    }
    for pair in brackets.windows(2) {
        if pair[0].1 == pair[1].1 {
            warnings.push(format!(
                "branches {} and {} cross 1 in the same grid cell; consider more steps",
                pair[0].0 + 1,
                pair[1].0 + 1
            ));
        }
    }
    if top_eigenvalues[0][k - 1] > 1.0 {
        warnings.push(format!("all {k} tracked branches exceed 1 at mu_min; increase k"));
    }

    let located: Vec<(usize, f64, f64)> = brackets
        .par_iter()
        .map(|&(j, i)| {
            let lo = (grid[i], top_eigenvalues[i][j] - 1.0);
            let hi = (grid[i + 1], top_eigenvalues[i + 1][j] - 1.0);
            locate_crossing(pencil, j, lo, hi, opts).map(|(mu, t)| (j, mu, t))
        })
        .collect::<Result<_>>()?;

    let wanted = (k + 1).min(pencil.dim());
    let solver = SolverOptions {
        seed: opts.seed,
        shift: Some(pencil.default_shift()),
        ..Default::default()
    };
    let pencil_eigenvalues =
        smallest_eigenpairs(&pencil.operator_matrix(), pencil.mass(), wanted, &solver)?.eigenvalues;
    let negative_in_window = pencil_eigenvalues
        .iter()
        .filter(|l| **l < -mu_min && **l > -mu_max)
        .count();

    let crossings: Vec<Crossing> = located
        .into_iter()
        .map(|(j, mu, t)| {
            let lambda = pencil_eigenvalues[j];
            let relative_error = (mu + lambda).abs() / mu;
            Crossing {
                branch: j + 1,
                mu,
                kernel_eigenvalue: t,
                matched_eigenvalue: lambda,
                relative_error,
                matched: relative_error <= opts.match_tol,
            }
        })
        .collect();
    for c in crossings
        .iter()
        .filter(|c| (c.kernel_eigenvalue - 1.0).abs() > opts.crossing_tol)
    {
        warnings.push(format!(
            "branch {} crossing resolved only to |t - 1| = {:e}",
            c.branch,
            (c.kernel_eigenvalue - 1.0).abs()
        ));
    }
    let all_matched = crossings.iter().all(|c| c.matched);
    Ok(BSScanResult {
        r: pencil.r(),
        seed: opts.seed,
        mu_grid: grid,
        top_eigenvalues,
        counts_agree: crossings.len() == negative_in_window,
        crossings,
        bound_check,
        lambda1_perp,
        max_w_squared: max_w2,
        pencil_eigenvalues,
        negative_in_window,
        all_matched,
        monotone,
        warnings,
    })
}

/// Randomized check of the kernel bound `⟨K_μ g, g⟩ ≤ max W²/(λ₁⊥ + μ) ‖g‖²`
/// on the mean-zero kernel, over random `μ` and `g`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KernelBoundCheck {
    pub trials: usize,
    pub seed: u64,
    pub lambda1_perp: f64,
    pub min_slack: f64,
    pub worst_mu: f64,
}

pub fn kernel_bound_check(pencil: &OperatorPencil, trials: usize, seed: u64) -> Result<KernelBoundCheck> {
    let lambda1_perp = first_nonzero_eigenvalue(pencil, seed)?;
    let max_w2 = -pencil.lower_bound();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ((1e-3 * pencil.spectral_scale()).ln(), (10.0 * max_w2).ln());
    let samples: Vec<(f64, u64)> = (0..trials)
        .map(|_| (rng.random_range(lo..hi).exp(), rng.random()))
        .collect();
    let slacks: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|&(mu, s)| {
            let op = KernelOperator::new(pencil, mu, Restriction::MeanZero)?;
            let bound = max_w2 / (lambda1_perp + mu);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let g: Vec<f64> = (0..pencil.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let kg = op.apply(&g)?;
            let rq = m_inner(pencil.mass(), &kg, &g) / m_inner(pencil.mass(), &g, &g);
            let top = op.top_eigenvalues(1, s, 1e-10)?[0];
            Ok((relative_slack(rq.max(top), bound), mu))
        })
        .collect::<Result<_>>()?;
    let (min_slack, worst_mu) = slacks
        .into_iter()
        .fold((f64::INFINITY, 0.0), |acc, x| if x.0 < acc.0 { x } else { acc });
    Ok(KernelBoundCheck {
        trials,
        seed,
        lambda1_perp,
        min_slack,
        worst_mu,
    })
}
