//! Discrete shape operators, principal curvatures and the order-r fields
//! (`P_r` per face, `H_{r+1}` and `W_r²` per vertex).

use std::io::Write;

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::curvalg::{self, CurvatureTuple};
use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};
use crate::surfaces::tangent_basis;

/// Orthonormal tangent frame `(t1, t2)` of a face or vertex.
pub type Frame = (Point, Point);

/// Per-face shape operators and per-vertex principal curvatures, plus the
/// fields of a fixed order `r` once [`build_fields`] has run.
#[derive(Debug, Clone)]
pub struct CurvatureField {
    face_frames: Vec<Frame>,
    face_shape: Vec<Matrix2<f64>>,
    vertex_kappas: Vec<[f64; 2]>,
    vertex_normals: Vec<Point>,
    order: Option<OrderFields>,
}

/// Fields attached to a specific order `r`.
#[derive(Debug, Clone)]
pub struct OrderFields {
    pub r: usize,
    /// `P_r` per face, in the face frame.
    pub face_newton: Vec<Matrix2<f64>>,
    /// `H_{r+1}` per vertex.
    pub h_next: Vec<f64>,
    /// `W_r²` per vertex.
    pub w_squared: Vec<f64>,
    /// Whether `min_v H_{r+1} > 0`.
    pub h_next_positive: bool,
}

/// Summary statistics for reports.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CurvatureSummary {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub h1_min: f64,
    pub h1_max: f64,
    pub h2_min: f64,
    pub h2_max: f64,
    pub r: Option<usize>,
    pub w_squared_min: Option<f64>,
    pub w_squared_max: Option<f64>,
    pub w_squared_mean: Option<f64>,
    pub h_next_positive: Option<bool>,
}

fn face_frame(p: &[Point; 3], normal: &Point) -> Frame {
    let t1 = (p[1] - p[0]).normalize();
    (t1, normal.cross(&t1))
}

/// Lifts a 2×2 tangent operator to a 3×3 tensor.
fn lift(frame: &Frame, s: &Matrix2<f64>) -> Matrix3<f64> {
    let basis = [frame.0, frame.1];
    let mut m = Matrix3::zeros();
    for i in 0..2 {
        for j in 0..2 {
            m += s[(i, j)] * basis[i] * basis[j].transpose();
        }
    }
    m
}

/// Restricts a 3×3 tensor to a tangent frame.
fn restrict(frame: &Frame, m: &Matrix3<f64>) -> Matrix2<f64> {
    let basis = [frame.0, frame.1];
    Matrix2::from_fn(|i, j| basis[i].dot(&(m * basis[j])))
}

/// Rotation taking unit vector `a` onto unit vector `b` about `a × b`.
fn rotation_between(a: &Point, b: &Point) -> Matrix3<f64> {
    let v = a.cross(b);
    let c = a.dot(b);
    if c <= -1.0 + 1e-12 {
        // antiparallel normals only occur on broken input; fall back to identity
        return Matrix3::identity();
    }
    let vx = v.cross_matrix();
    Matrix3::identity() + vx + vx * vx / (1.0 + c)
}

fn sorted_eigen(s: &Matrix2<f64>) -> ([f64; 2], Matrix2<f64>) {
    let eig = s.symmetric_eigen();
    let (mut k, mut v) = ([eig.eigenvalues[0], eig.eigenvalues[1]], eig.eigenvectors);
    if k[0] > k[1] {
        k.swap(0, 1);
        v.swap_columns(0, 1);
    }
    (k, v)
}

/// Vertex normals from a least-squares height-function fit over the
/// two-ring, in the tangent plane of the mesh vertex normal; refit once in
/// the improved frame. Falls back to the mesh normal when the fit is
/// underdetermined.
pub fn fitted_vertex_normals(mesh: &TriMesh) -> Vec<Point> {
    let n = mesh.vertex_count();
    let mut ring1: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in mesh.edges() {
        ring1[e[0]].push(e[1]);
        ring1[e[1]].push(e[0]);
    }
    let verts = mesh.vertices();
    (0..n)
        .into_par_iter()
        .map(|v| {
            let mut ring: Vec<usize> = ring1[v].clone();
            for &u in &ring1[v] {
                ring.extend(ring1[u].iter().copied().filter(|&w| w != v));
            }
            ring.sort_unstable();
            ring.dedup();
            let mut normal = mesh.vertex_normals()[v];
            for _ in 0..2 {
                match fit_height_normal(&verts[v], &normal, ring.iter().map(|&u| verts[u])) {
                    Some(nn) => normal = nn,
                    None => break,
                }
            }
            normal
        })
        .collect()
}

/// Normal of the cubic height function `z(x, y)` fitted (without constant
/// term) through the neighbours, expressed in the frame of `normal`.
fn fit_height_normal(p: &Point, normal: &Point, ring: impl Iterator<Item = Point>) -> Option<Point> {
    const TERMS: usize = 9;
    let (t1, t2) = tangent_basis(normal);
    let local: Vec<(f64, f64, f64)> = ring
        .map(|q| {
            let d = q - p;
            (d.dot(&t1), d.dot(&t2), d.dot(normal))
        })
        .collect();
    if local.len() < TERMS + 2 {
        return None;
    }
    let h = (local.iter().map(|(x, y, _)| x * x + y * y).sum::<f64>() / local.len() as f64).sqrt();
    if h <= 0.0 {
        return None;
    }
    let mut ata = SMatrix::<f64, TERMS, TERMS>::zeros();
    let mut atb = SVector::<f64, TERMS>::zeros();
    for &(x, y, z) in &local {
        let (x, y) = (x / h, y / h);
        let row = SVector::<f64, TERMS>::from([x, y, x * x, x * y, y * y, x * x * x, x * x * y, x * y * y, y * y * y]);
        ata += row * row.transpose();
        atb += row * (z / h);
    }
    let eig = ata.symmetric_eigenvalues();
    if !(eig.min() > 1e-10 * eig.max()) {
        return None;
    }
    let c = ata.cholesky()?.solve(&atb);
    // slopes are scale-free: dz/dx = (z/h)/(x/h)
    let nn = (normal - c[0] * t1 - c[1] * t2).normalize();
    nn.iter().all(|x| x.is_finite()).then_some(nn)
}

/// Per-face least-squares fit of `dN = A dp` along the three edges, using
/// fitted vertex normals. The fitted operator is symmetric by
/// construction; the unit sphere gives `+1/R`.
pub fn estimate_shape_operators(mesh: &TriMesh) -> Result<CurvatureField> {
    let verts = mesh.vertices();
    let normals = fitted_vertex_normals(mesh);
    let per_face: Vec<Result<(Frame, Matrix2<f64>)>> = mesh
        .faces()
        .par_iter()
        .zip(mesh.face_normals().par_iter())
        .enumerate()
        .map(|(fi, (f, nf))| {
            let p = [verts[f[0]], verts[f[1]], verts[f[2]]];
            let n = [normals[f[0]], normals[f[1]], normals[f[2]]];
            let frame = face_frame(&p, nf);
            let mut a = SMatrix::<f64, 6, 3>::zeros();
            let mut b = SVector::<f64, 6>::zeros();
            for k in 0..3 {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                let e = p[j] - p[i];
                let dn = n[j] - n[i];
                let (e1, e2) = (e.dot(&frame.0), e.dot(&frame.1));
                // unknowns (a, b, c) of [[a, b], [b, c]]
                a[(2 * k, 0)] = e1;
                a[(2 * k, 1)] = e2;
                a[(2 * k + 1, 1)] = e1;
                a[(2 * k + 1, 2)] = e2;
                b[2 * k] = dn.dot(&frame.0);
                b[2 * k + 1] = dn.dot(&frame.1);
            }
            let normal = a.transpose() * a;
            let eig = normal.symmetric_eigenvalues();
            if !(eig.min() > 1e-20 * eig.max()) {
                return Err(Error::RankDeficient { face: fi });
            }
            let x = normal
                .cholesky()
                .ok_or(Error::RankDeficient { face: fi })?
                .solve(&(a.transpose() * b));
            Ok((frame, Matrix2::new(x[0], x[1], x[1], x[2])))
        })
        .collect();
    let mut face_frames = Vec::with_capacity(per_face.len());
    let mut face_shape = Vec::with_capacity(per_face.len());
    for item in per_face {
        let (frame, s) = item?;
        face_frames.push(frame);
        face_shape.push(s);
    }
    let mut field = CurvatureField {
        face_frames,
        face_shape,
        vertex_kappas: Vec::new(),
        vertex_normals: Vec::new(),
        order: None,
    };
    field.vertex_kappas = vertex_principal_curvatures(&field, mesh, &normals);
    field.vertex_normals = normals;
    Ok(field)
}

/// Vertex operators as area-weighted averages of the incident face
/// operators, each rotated into the vertex tangent plane; returns the sorted
/// eigenvalues `κ₁ <= κ₂`.
pub fn vertex_principal_curvatures(field: &CurvatureField, mesh: &TriMesh, normals: &[Point]) -> Vec<[f64; 2]> {
    (0..mesh.vertex_count())
        .into_par_iter()
        .map(|v| {
            let nv = normals[v];
            let frame = tangent_basis(&nv);
            let mut acc = Matrix2::zeros();
            let mut weight = 0.0;
            for &f in mesh.vertex_faces(v) {
                let nf = mesh.face_normals()[f];
                let rot = rotation_between(&nf, &nv);
                let s3 = rot * lift(&field.face_frames[f], &field.face_shape[f]) * rot.transpose();
                let area = mesh.face_areas()[f];
                acc += area * restrict(&frame, &s3);
                weight += area;
            }
            if weight > 0.0 {
                acc /= weight;
            }
            let acc = 0.5 * (acc + acc.transpose());
            sorted_eigen(&acc).0
        })
        .collect()
}

/// Attaches the order-`r` fields (`r ∈ {0, 1}` on surfaces).
///
/// `P_r` is assembled per face in the eigenbasis of the face operator from
/// the Newton eigenvalues; `H_{r+1}` and `W_r²` come from the vertex
/// curvatures. For `r >= 1` a non-positive `H_{r+1}` anywhere is an error
/// naming the worst vertex.
pub fn build_fields(field: &CurvatureField, r: usize) -> Result<CurvatureField> {
    if r > 1 {
        return Err(Error::Domain(format!(
            "surface pipeline supports r in {{0, 1}}, got {r}"
        )));
    }
    let face_newton = field
        .face_shape
        .iter()
        .map(|s| {
            if r == 0 {
                return Ok(Matrix2::identity());
            }
            let (k, vecs) = sorted_eigen(s);
            let eig = curvalg::newton_eigenvalues(&CurvatureTuple::new(k.to_vec())?, r)?.eigenvalues;
            let d = Matrix2::from_diagonal(&nalgebra::Vector2::new(eig[0], eig[1]));
            let p = vecs * d * vecs.transpose();
            Ok(0.5 * (p + p.transpose()))
        })
        .collect::<Result<Vec<_>>>()?;

    let h_next: Vec<f64> = field
        .vertex_kappas
        .iter()
        .map(|k| curvalg::mean_curvature(&CurvatureTuple::new(k.to_vec())?, r + 1))
        .collect::<Result<_>>()?;
    let (worst, &h_min) = h_next
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::InvalidArgument("mesh has no vertices".into()))?;
    let h_next_positive = h_min > 0.0;
    if r >= 1 && !h_next_positive {
        return Err(Error::CurvatureNotPositive {
            order: r + 1,
            value: h_min,
            vertex: Some(worst),
        });
    }
    let w_squared = field
        .vertex_kappas
        .iter()
        .map(|k| curvalg::potential_w_squared(&CurvatureTuple::new(k.to_vec())?, r))
        .collect::<Result<Vec<_>>>()?;
    let mut out = field.clone();
    out.order = Some(OrderFields {
        r,
        face_newton,
        h_next,
        w_squared,
        h_next_positive,
    });
    Ok(out)
}

impl CurvatureField {
    /// Shape operators plus vertex curvatures.
    pub fn estimate(mesh: &TriMesh) -> Result<Self> {
        estimate_shape_operators(mesh)
    }

    pub fn face_frames(&self) -> &[Frame] {
        &self.face_frames
    }

    pub fn face_shape_operators(&self) -> &[Matrix2<f64>] {
        &self.face_shape
    }

    pub fn vertex_kappas(&self) -> &[[f64; 2]] {
        &self.vertex_kappas
    }

    /// The fitted unit normals the estimate was built from.
    pub fn vertex_normals(&self) -> &[Point] {
        &self.vertex_normals
    }

    pub fn vertex_tuple(&self, v: usize) -> CurvatureTuple {
        CurvatureTuple::new(self.vertex_kappas[v].to_vec()).expect("estimated curvatures are finite")
    }

    /// `H_k` at every vertex.
    pub fn vertex_mean_curvature(&self, k: usize) -> Vec<f64> {
        self.vertex_kappas
            .iter()
            .map(|kv| match k {
                0 => 1.0,
                1 => 0.5 * (kv[0] + kv[1]),
                _ => kv[0] * kv[1],
            })
            .collect()
    }

    /// Normalized shape-operator norm at every vertex.
    pub fn vertex_shape_norm(&self) -> Vec<f64> {
        (0..self.vertex_kappas.len())
            .map(|v| curvalg::shape_norm(&self.vertex_tuple(v)))
            .collect()
    }

    pub fn order(&self) -> Option<&OrderFields> {
        self.order.as_ref()
    }

    /// Order fields, or an error when [`build_fields`] has not run.
    pub fn require_order(&self, r: usize) -> Result<&OrderFields> {
        match &self.order {
            Some(o) if o.r == r => Ok(o),
            Some(o) => Err(Error::InvalidArgument(format!(
                "fields were built for r = {}, not {r}",
                o.r
            ))),
            None => Err(Error::InvalidArgument("order fields have not been built".into())),
        }
    }

    pub fn summary(&self) -> CurvatureSummary {
        let fold = |it: &mut dyn Iterator<Item = f64>| {
            it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
        };
        let (kappa_min, kappa_max) = fold(&mut self.vertex_kappas.iter().flat_map(|k| k.iter().copied()));
        let (h1_min, h1_max) = fold(&mut self.vertex_mean_curvature(1).into_iter());
        let (h2_min, h2_max) = fold(&mut self.vertex_mean_curvature(2).into_iter());
        let w = self.order.as_ref().map(|o| {
            let (lo, hi) = fold(&mut o.w_squared.iter().copied());
            (lo, hi, o.w_squared.iter().sum::<f64>() / o.w_squared.len() as f64)
        });
        CurvatureSummary {
            kappa_min,
            kappa_max,
            h1_min,
            h1_max,
            h2_min,
            h2_max,
            r: self.order.as_ref().map(|o| o.r),
            w_squared_min: w.map(|w| w.0),
            w_squared_max: w.map(|w| w.1),
            w_squared_mean: w.map(|w| w.2),
            h_next_positive: self.order.as_ref().map(|o| o.h_next_positive),
        }
    }

    /// CSV with columns `vertex,k1,k2,H1,H2,W_r` (`W_r` empty before
    /// [`build_fields`]).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let r = self.order.as_ref().map(|o| o.r);
        match r {
            Some(r) => writeln!(out, "vertex,k1,k2,H1,H2,W{r}")?,
            None => writeln!(out, "vertex,k1,k2,H1,H2,W")?,
        }
        for (v, k) in self.vertex_kappas.iter().enumerate() {
            let w = self
                .order
                .as_ref()
                .map(|o| format!("{:?}", o.w_squared[v].sqrt()))
                .unwrap_or_default();
            writeln!(
                out,
                "{v},{:?},{:?},{:?},{:?},{w}",
                k[0],
                k[1],
                0.5 * (k[0] + k[1]),
                k[0] * k[1]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{parse_obj, subdivide_project};
    use crate::surfaces::{generate, torus_grid, AnalyticSurface};

    fn sphere(radius: f64, k: u32) -> TriMesh {
        generate(&AnalyticSurface::Sphere { radius }, k).unwrap()
    }

    #[test]
    fn sphere_face_operators_near_identity() {
        let m = sphere(1.0, 3);
        let f = CurvatureField::estimate(&m).unwrap();
        let dev = f
            .face_shape_operators()
            .iter()
            .map(|s| (s - Matrix2::identity()).abs().max())
            .fold(0.0, f64::max);
        assert!(dev <= 0.05, "max deviation {dev}");
    }

    #[test]
    fn flat_faces_have_zero_operator() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
                    f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";
        let cube = TriMesh::try_from(parse_obj(text).unwrap()).unwrap();
        let mut m = cube;
        for _ in 0..3 {
            m = subdivide_project(&m, None).unwrap();
        }
        let f = CurvatureField::estimate(&m).unwrap();
        // faces whose normal fits only see points of one side of the box
        let interior = |p: &Point| p.iter().filter(|c| **c > 0.25 - 1e-9 && **c < 0.75 + 1e-9).count() == 2;
        let mut checked = 0;
        for (face, s) in m.faces().iter().zip(f.face_shape_operators()) {
            if face.iter().all(|&v| interior(&m.vertices()[v])) {
                assert!(s.abs().max() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn sphere_vertex_curvatures_and_scaling() {
        let f = CurvatureField::estimate(&sphere(1.0, 4)).unwrap();
        assert!(f.vertex_kappas().iter().flatten().all(|k| (0.98..=1.02).contains(k)));
        let f2 = CurvatureField::estimate(&sphere(2.0, 4)).unwrap();
        for (a, b) in f.vertex_kappas().iter().zip(f2.vertex_kappas()) {
            assert!((a[0] - 2.0 * b[0]).abs() < 1e-12 && (a[1] - 2.0 * b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipsoid_tip_curvature() {
        let e = AnalyticSurface::Ellipsoid { a: 2.0, b: 1.0, c: 1.0 };
        let m = generate(&e, 4).unwrap();
        let f = CurvatureField::estimate(&m).unwrap();
        let tip = (0..m.vertex_count())
            .min_by(|&a, &b| {
                let d = |v: usize| (m.vertices()[v] - Point::new(2.0, 0.0, 0.0)).norm();
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        assert!((m.vertices()[tip] - Point::new(2.0, 0.0, 0.0)).norm() < 1e-9);
        for &fi in m.vertex_faces(tip) {
            let (k, _) = sorted_eigen(&f.face_shape_operators()[fi]);
            assert!(k.iter().all(|k| (k - 2.0).abs() < 0.2), "{k:?}");
        }
        let kv = f.vertex_kappas()[tip];
        assert!(kv.iter().all(|k| (k - 2.0).abs() < 0.2), "{kv:?}");
    }

    #[test]
    fn torus_sign_pattern_and_gate() {
        let t = AnalyticSurface::Torus { major: 2.0, minor: 0.5 };
        let m = torus_grid(2.0, 0.5, 64, 32).unwrap();
        let f = CurvatureField::estimate(&m).unwrap();
        let agree = m
            .vertices()
            .iter()
            .zip(f.vertex_kappas())
            .filter(|(p, k)| {
                let exact = t.exact_curvatures(p).unwrap().kappas()[0];
                exact.signum() == k[0].signum() || exact.abs() < 1e-3
            })
            .count();
        assert!(agree as f64 >= 0.99 * m.vertex_count() as f64);
        match build_fields(&f, 1) {
            Err(Error::CurvatureNotPositive {
                order: 2,
                value,
                vertex: Some(v),
            }) => {
                assert!(value <= 0.0);
                assert!(f.vertex_mean_curvature(2)[v] <= 0.0);
            }
            other => panic!("expected H_2 gate, got {other:?}"),
        }
        let r0 = build_fields(&f, 0).unwrap();
        assert!(!r0.order().unwrap().h_next_positive || r0.order().unwrap().h_next.iter().all(|h| *h > 0.0));
    }

    #[test]
    fn sphere_order_fields() {
        let f = CurvatureField::estimate(&sphere(1.0, 4)).unwrap();
        let f1 = build_fields(&f, 1).unwrap();
        let o = f1.order().unwrap();
        assert!(o.h_next_positive);
        for p in &o.face_newton {
            assert!((p - Matrix2::identity()).abs().max() < 0.05);
        }
        let f0 = build_fields(&f, 0).unwrap();
        for w2 in &f0.order().unwrap().w_squared {
            assert!((w2.sqrt() - 2f64.sqrt()).abs() < 0.03);
        }
        assert!(f0
            .order()
            .unwrap()
            .face_newton
            .iter()
            .all(|p| *p == Matrix2::identity()));
        assert!(build_fields(&f, 2).is_err());
    }

    #[test]
    fn newton_trace_per_face() {
        let e = AnalyticSurface::Ellipsoid { a: 2.0, b: 1.0, c: 1.0 };
        let f = build_fields(&CurvatureField::estimate(&generate(&e, 3).unwrap()).unwrap(), 1).unwrap();
        for (s, p) in f.face_shape_operators().iter().zip(&f.order().unwrap().face_newton) {
            assert!((p.trace() - s.trace()).abs() <= 1e-12 * s.trace().abs().max(1.0));
            assert!((p - (Matrix2::identity() * s.trace() - s)).abs().max() < 1e-12);
            // positive definite on a strictly convex surface
            let (k, _) = sorted_eigen(p);
            assert!(k[0] > 0.0);
        }
    }

    #[test]
    fn csv_export() {
        let f = build_fields(&CurvatureField::estimate(&sphere(1.0, 1)).unwrap(), 0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("vertex,k1,k2,H1,H2,W0\n0,"));
        assert_eq!(text.lines().count(), 43);
    }
}
