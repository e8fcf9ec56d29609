//! Weak-form assembly of the pencil `(K_r − M_W, M)` for `−div(P_r ∇·) − W_r²`.

use std::io::Write;

use nalgebra::{Matrix3, Vector2};
use rayon::prelude::*;

use crate::curvature::{CurvatureField, Frame};
use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};
use crate::sparse::CsrMatrix;

/// Stiffness `K_r`, lumped mass `M` and lumped potential mass `M_W`.
#[derive(Debug, Clone)]
pub struct OperatorPencil {
    r: usize,
    n: usize,
    stiffness: CsrMatrix,
    mass: Vec<f64>,
    w_squared: Vec<f64>,
    potential_mass: Vec<f64>,
}

/// Gradients of the three hat functions of a face in its tangent frame.
fn hat_gradients(p: &[Point; 3], normal: &Point, area: f64, frame: &Frame) -> [Vector2<f64>; 3] {
    std::array::from_fn(|k| {
        let e = p[(k + 2) % 3] - p[(k + 1) % 3];
        let g = normal.cross(&e) / (2.0 * area);
        Vector2::new(g.dot(&frame.0), g.dot(&frame.1))
    })
}

fn face_points(mesh: &TriMesh, f: usize) -> [Point; 3] {
    let face = mesh.faces()[f];
    [
        mesh.vertices()[face[0]],
        mesh.vertices()[face[1]],
        mesh.vertices()[face[2]],
    ]
}

fn check_face(mesh: &TriMesh, f: usize) -> Result<f64> {
    let area = mesh.face_areas()[f];
    let scale = face_points(mesh, f)
        .iter()
        .map(|p| p.norm())
        .fold(0.0, f64::max)
        .max(1.0);
    if !(area > 1e-14 * scale * scale) {
        return Err(Error::DegenerateGeometry(format!(
            "face {f} has area {area:e}; its gradients are undefined"
        )));
    }
    Ok(area)
}

/// Local `3×3` stiffness blocks `area · Gᵀ P G` per face.
fn local_stiffness(
    mesh: &TriMesh,
    field: &CurvatureField,
    newton: &[nalgebra::Matrix2<f64>],
) -> Result<Vec<Matrix3<f64>>> {
    (0..mesh.face_count())
        .into_par_iter()
        .map(|f| {
            let area = check_face(mesh, f)?;
            let g = hat_gradients(
                &face_points(mesh, f),
                &mesh.face_normals()[f],
                area,
                &field.face_frames()[f],
            );
            let p = newton[f];
            Ok(Matrix3::from_fn(|i, j| area * g[i].dot(&(p * g[j]))))
        })
        .collect()
}

/// Assembles the pencil for order `r`; the field must carry order-`r` data.
pub fn assemble_pencil(mesh: &TriMesh, field: &CurvatureField, r: usize) -> Result<OperatorPencil> {
    let order = field.require_order(r)?;
    if field.face_shape_operators().len() != mesh.face_count() || order.w_squared.len() != mesh.vertex_count() {
        return Err(Error::DimensionMismatch {
            expected: mesh.face_count(),
            found: field.face_shape_operators().len(),
        });
    }
    if r >= 1 && !order.h_next_positive {
        return Err(Error::CurvatureNotPositive {
            order: r + 1,
            value: order.h_next.iter().copied().fold(f64::INFINITY, f64::min),
            vertex: None,
        });
    }
    let blocks = local_stiffness(mesh, field, &order.face_newton)?;
    // merged in face order, so the result does not depend on the thread count
    let triplets = mesh
        .faces()
        .iter()
        .zip(&blocks)
        .flat_map(|(face, b)| (0..3).flat_map(move |i| (0..3).map(move |j| (face[i], face[j], b[(i, j)]))));
    let stiffness = CsrMatrix::from_triplets(mesh.vertex_count(), triplets);
    let mass = mesh.vertex_areas().to_vec();
    let potential_mass = mass.iter().zip(&order.w_squared).map(|(a, w)| a * w).collect();
    Ok(OperatorPencil {
        r,
        n: 2,
        stiffness,
        mass,
        w_squared: order.w_squared.clone(),
        potential_mass,
    })
}

/// `xᵀ(K_r − M_W)x` accumulated face by face from 3D gradients, without
/// forming any matrix.
pub fn quadratic_form_by_faces(mesh: &TriMesh, field: &CurvatureField, r: usize, x: &[f64]) -> Result<f64> {
    let order = field.require_order(r)?;
    if x.len() != mesh.vertex_count() {
        return Err(Error::DimensionMismatch {
            expected: mesh.vertex_count(),
            found: x.len(),
        });
    }
    let mut energy = 0.0;
    for (f, face) in mesh.faces().iter().enumerate() {
        let area = check_face(mesh, f)?;
        let p = face_points(mesh, f);
        let n = mesh.face_normals()[f];
        let grad: Point = (0..3)
            .map(|k| x[face[k]] * n.cross(&(p[(k + 2) % 3] - p[(k + 1) % 3])))
            .sum::<Point>()
            / (2.0 * area);
        let (t1, t2) = field.face_frames()[f];
        let g = Vector2::new(grad.dot(&t1), grad.dot(&t2));
        energy += area * g.dot(&(order.face_newton[f] * g));
    }
    let areas = mesh.vertex_areas();
    let potential: f64 = (0..x.len()).map(|v| areas[v] * order.w_squared[v] * x[v] * x[v]).sum();
    Ok(energy - potential)
}

impl OperatorPencil {
    pub fn r(&self) -> usize {
        self.r
    }

    /// Surface dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Diagonal of the lumped mass.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `W_r²` per vertex.
    pub fn w_squared(&self) -> &[f64] {
        &self.w_squared
    }

    /// `W_r` per vertex.
    pub fn w(&self) -> Vec<f64> {
        self.w_squared.iter().map(|w| w.max(0.0).sqrt()).collect()
    }

    /// Diagonal of `M_W`.
    pub fn potential_mass(&self) -> &[f64] {
        &self.potential_mass
    }

    /// `K_r − M_W` as a sparse matrix.
    pub fn operator_matrix(&self) -> CsrMatrix {
        self.stiffness.add_diagonal(&self.potential_mass, -1.0)
    }

    /// `(K_r − M_W) x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut y = self.stiffness.mul_vec(x);
        for ((y, m), x) in y.iter_mut().zip(&self.potential_mass).zip(x) {
            *y -= m * x;
        }
        Ok(y)
    }

    /// Same stiffness with the potential replaced by `w_squared`.
    pub fn with_potential(&self, w_squared: Vec<f64>) -> Result<Self> {
        if w_squared.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: w_squared.len(),
            });
        }
        if let Some(v) = w_squared.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "potential at vertex {v} is {}",
                w_squared[v]
            )));
        }
        let potential_mass = self.mass.iter().zip(&w_squared).map(|(a, w)| a * w).collect();
        Ok(Self {
            w_squared,
            potential_mass,
            ..self.clone()
        })
    }

    /// `−max W²`: every eigenvalue lies above it because `K_r` is
    /// positive semidefinite on convex meshes.
    pub fn lower_bound(&self) -> f64 {
        -self.w_squared.iter().copied().fold(0.0, f64::max)
    }

    /// Mean vertex `W²`, or 1 when the potential vanishes.
    pub fn spectral_scale(&self) -> f64 {
        let mean = self.w_squared.iter().sum::<f64>() / self.dim().max(1) as f64;
        if mean > 0.0 {
            mean
        } else {
            1.0
        }
    }

    /// Shift-invert shift `lower_bound − 0.1·spectral_scale`.
    pub fn default_shift(&self) -> f64 {
        self.lower_bound() - 0.1 * self.spectral_scale()
    }

    /// Writes `matrix,row,col,value` lines for `K`, `M` and `MW`.
    pub fn write_coordinates<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "matrix,row,col,value")?;
        for (i, j, v) in self.stiffness.iter() {
            writeln!(out, "K,{i},{j},{v:e}")?;
        }
        for (i, v) in self.mass.iter().enumerate() {
            writeln!(out, "M,{i},{i},{v:e}")?;
        }
        for (i, v) in self.potential_mass.iter().enumerate() {
            writeln!(out, "MW,{i},{i},{v:e}")?;
        }
        Ok(())
    }
}
