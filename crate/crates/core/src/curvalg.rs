//! Pointwise algebra of principal curvatures in arbitrary dimension.
//!
//! Everything here is a pure function of a [`CurvatureTuple`]: the elementary
//! symmetric functions `S_r`, the normalized curvatures `H_r = S_r / C(n, r)`,
//! eigenvalues of the Newton transformations `P_r`, the constant
//! `c_r = (n - r) C(n, r)` and the potential `W_r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal curvatures `κ_1..κ_n` at a point of a hypersurface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTuple(Vec<f64>);

impl CurvatureTuple {
    pub fn new(kappas: impl Into<Vec<f64>>) -> Result<Self> {
        let kappas = kappas.into();
        if kappas.is_empty() {
            return Err(Error::Domain("curvature tuple must be non-empty".into()));
        }
        if let Some(bad) = kappas.iter().find(|k| !k.is_finite()) {
            return Err(Error::Domain(format!("non-finite curvature {bad}")));
        }
        Ok(Self(kappas))
    }

    /// Dimension `n` of the hypersurface.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn kappas(&self) -> &[f64] {
        &self.0
    }
}

/// Eigenvalues of the Newton transformation `P_r` along the principal
/// directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonSpectrum {
    pub r: usize,
    pub eigenvalues: Vec<f64>,
}

/// All elementary symmetric functions `S_0..S_m` of `values`, via the
/// coefficient recurrence of `prod (1 + κ_i t)`.
pub(crate) fn all_elementary_symmetric(values: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; values.len() + 1];
    e[0] = 1.0;
    for (i, &k) in values.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            e[j] += k * e[j - 1];
        }
    }
    e
}

fn check_order(n: usize, r: usize) -> Result<()> {
    if r > n {
        return Err(Error::Domain(format!("order r = {r} exceeds dimension n = {n}")));
    }
    Ok(())
}

/// Binomial coefficient as a float; exact for the small arguments used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `S_r(κ)`, with `S_0 = 1`.
pub fn elementary_symmetric(kappas: &CurvatureTuple, r: usize) -> Result<f64> {
    check_order(kappas.dim(), r)?;
    Ok(all_elementary_symmetric(kappas.kappas())[r])
}

/// Normalized r-th mean curvature `H_r = S_r / C(n, r)`.
pub fn mean_curvature(kappas: &CurvatureTuple, r: usize) -> Result<f64> {
    let n = kappas.dim();
    check_order(n, r)?;
    Ok(all_elementary_symmetric(kappas.kappas())[r] / binomial(n, r))
}

/// Eigenvalues of `P_r`: entry `i` is `S_r` of the tuple with `κ_i` removed.
///
/// For `r = n` this is the zero operator.
pub fn newton_eigenvalues(kappas: &CurvatureTuple, r: usize) -> Result<NewtonSpectrum> {
    let n = kappas.dim();
    check_order(n, r)?;
    let k = kappas.kappas();
    let mut rest = Vec::with_capacity(n.saturating_sub(1));
    let eigenvalues = (0..n)
        .map(|i| {
            rest.clear();
            rest.extend(k.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v));
            if r > rest.len() {
                0.0
            } else {
                all_elementary_symmetric(&rest)[r]
            }
        })
        .collect();
    Ok(NewtonSpectrum { r, eigenvalues })
}

/// Same eigenvalues as [`newton_eigenvalues`], obtained by running the
/// recursion `P_0 = I`, `P_r = S_r I - A P_{r-1}` along each principal
/// direction.
pub fn newton_eigenvalues_by_recursion(kappas: &CurvatureTuple, r: usize) -> Result<NewtonSpectrum> {
    let n = kappas.dim();
    check_order(n, r)?;
    let s = all_elementary_symmetric(kappas.kappas());
    let eigenvalues = kappas
        .kappas()
        .iter()
        .map(|&k| (1..=r).fold(1.0, |prev, j| s[j] - k * prev))
        .collect();
    Ok(NewtonSpectrum { r, eigenvalues })
}

/// `c_r = (n - r) C(n, r)`, defined for `0 <= r <= n - 1`.
pub fn c_coefficient(n: usize, r: usize) -> Result<f64> {
    if n == 0 || r >= n {
        return Err(Error::Domain(format!("c_r needs 0 <= r < n, got n = {n}, r = {r}")));
    }
    Ok((n - r) as f64 * binomial(n, r))
}

/// `W_r^2 = c_r H_{r+1}^{(r+2)/(r+1)}`.
///
/// For `r = 0` this is `n H_1^2` and holds for either sign of `H_1`. For
/// `r >= 1` it requires `H_{r+1} > 0`.
pub fn potential_w_squared(kappas: &CurvatureTuple, r: usize) -> Result<f64> {
    let n = kappas.dim();
    let c = c_coefficient(n, r)?;
    let h = mean_curvature(kappas, r + 1)?;
    if r == 0 {
        return Ok(c * h * h);
    }
    if !(h > 0.0) {
        return Err(Error::CurvatureNotPositive {
            order: r + 1,
            value: h,
            vertex: None,
        });
    }
    Ok(c * h.powf((r + 2) as f64 / (r + 1) as f64))
}

/// The potential `W_r`, the positive square root of [`potential_w_squared`].
pub fn potential_w(kappas: &CurvatureTuple, r: usize) -> Result<f64> {
    potential_w_squared(kappas, r).map(f64::sqrt)
}

/// `H_r^{1/r} - H_{r+1}^{1/(r+1)}` for a tuple of positive curvatures.
///
/// Non-negative, and zero exactly when all curvatures coincide.
pub fn maclaurin_gap(kappas: &CurvatureTuple, r: usize) -> Result<f64> {
    let n = kappas.dim();
    if r == 0 || r + 1 > n {
        return Err(Error::Domain(format!(
            "Maclaurin gap needs 1 <= r < n, got n = {n}, r = {r}"
        )));
    }
    if let Some(bad) = kappas.kappas().iter().find(|&&k| !(k > 0.0)) {
        return Err(Error::Domain(format!(
            "Maclaurin gap needs positive curvatures, found {bad}"
        )));
    }
    let hr = mean_curvature(kappas, r)?;
    let hr1 = mean_curvature(kappas, r + 1)?;
    Ok(hr.powf(1.0 / r as f64) - hr1.powf(1.0 / (r + 1) as f64))
}

/// Normalized Hilbert-Schmidt norm `((1/n) Σ κ_i^2)^{1/2}` of the shape
/// operator.
///
/// This is the normalization under which the comparison operator
/// `-L_r - c_r |A|^{r+2}` coincides with `-L_r - W_r^2` on round spheres.
pub fn shape_norm(kappas: &CurvatureTuple) -> f64 {
    let k = kappas.kappas();
    (k.iter().map(|x| x * x).sum::<f64>() / k.len() as f64).sqrt()
}
