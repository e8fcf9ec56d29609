//! Analytic test surfaces with exact normals and principal curvatures.
//!
//! Sign convention throughout: normals point outward and a sphere of radius
//! `R` has principal curvatures `+1/R`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::curvalg::CurvatureTuple;
use crate::error::{Error, Result};
use crate::mesh::{icosahedron, subdivide_project, Point, Projector, TriMesh};

/// Closed analytic surface centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticSurface {
    Sphere {
        radius: f64,
    },
    Ellipsoid {
        a: f64,
        b: f64,
        c: f64,
    },
    /// Surface of revolution about z with radial profile
    /// `ρ(θ) = R (1 + ε cos(m θ))`, θ the polar angle.
    BumpedSphere {
        radius: f64,
        amplitude: f64,
        frequency: u32,
    },
    /// Tube of radius `minor` around the circle of radius `major` in the
    /// xy-plane.
    Torus {
        major: f64,
        minor: f64,
    },
}

/// Largest bump amplitude for which the bumped sphere stays strictly convex:
/// `1 / (1 + m^2)`.
///
/// The meridian curvature numerator `ρ² + 2ρ'² - ρρ''` stays positive as long
/// as `ε (1 + m²) < 1`; the parallel curvature is positive under the same
/// bound.
pub fn bump_convexity_limit(frequency: u32) -> f64 {
    1.0 / (1.0 + (frequency as f64).powi(2))
}

const ON_SURFACE_TOL: f64 = 1e-9;

impl AnalyticSurface {
    pub fn check(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Self::Sphere { radius } => positive("radius", radius),
            Self::Ellipsoid { a, b, c } => {
                positive("a", a)?;
                positive("b", b)?;
                positive("c", c)
            }
            Self::BumpedSphere { radius, amplitude, .. } => {
                positive("radius", radius)?;
                if !(amplitude.abs() < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "bump amplitude must lie in (-1, 1), got {amplitude}"
                    )));
                }
                Ok(())
            }
            Self::Torus { major, minor } => {
                positive("major radius", major)?;
                positive("minor radius", minor)?;
                if minor >= major {
                    return Err(Error::InvalidArgument("torus needs minor < major".into()));
                }
                Ok(())
            }
        }
    }

    /// Length scale used for relative tolerances.
    pub fn scale(&self) -> f64 {
        match *self {
            Self::Sphere { radius } | Self::BumpedSphere { radius, .. } => radius,
            Self::Ellipsoid { a, b, c } => a.max(b).max(c),
            Self::Torus { major, .. } => major,
        }
    }

    fn bump(radius: f64, amplitude: f64, m: u32, theta: f64) -> (f64, f64, f64) {
        let m = m as f64;
        let rho = radius * (1.0 + amplitude * (m * theta).cos());
        let d1 = -radius * amplitude * m * (m * theta).sin();
        let d2 = -radius * amplitude * m * m * (m * theta).cos();
        (rho, d1, d2)
    }

    /// Surface point at parameters `(u, v)`: polar and azimuthal angle for
    /// the sphere-like surfaces, the two angles for the torus.
    pub fn point(&self, u: f64, v: f64) -> Point {
        match *self {
            Self::Sphere { radius } => radius * Point::new(u.sin() * v.cos(), u.sin() * v.sin(), u.cos()),
            Self::Ellipsoid { a, b, c } => Point::new(a * u.sin() * v.cos(), b * u.sin() * v.sin(), c * u.cos()),
            Self::BumpedSphere {
                radius,
                amplitude,
                frequency,
            } => {
                let (rho, _, _) = Self::bump(radius, amplitude, frequency, u);
                rho * Point::new(u.sin() * v.cos(), u.sin() * v.sin(), u.cos())
            }
            Self::Torus { major, minor } => {
                let ring = major + minor * v.cos();
                Point::new(ring * u.cos(), ring * u.sin(), minor * v.sin())
            }
        }
    }

    /// Inverse of [`point`](Self::point) for points on the surface.
    pub fn parameters(&self, p: &Point) -> (f64, f64) {
        match *self {
            Self::Sphere { .. } | Self::BumpedSphere { .. } => {
                ((p.z / p.norm()).clamp(-1.0, 1.0).acos(), p.y.atan2(p.x))
            }
            Self::Ellipsoid { a, b, c } => ((p.z / c).clamp(-1.0, 1.0).acos(), (p.y / b).atan2(p.x / a)),
            Self::Torus { major, .. } => {
                let d = p.x.hypot(p.y);
                (p.y.atan2(p.x), p.z.atan2(d - major))
            }
        }
    }

    /// Relative distance-like residual of `p` from the surface.
    pub fn residual(&self, p: &Point) -> f64 {
        match *self {
            Self::Sphere { radius } => (p.norm() - radius).abs() / radius,
            Self::Ellipsoid { a, b, c } => ((p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2) - 1.0).abs(),
            Self::BumpedSphere {
                radius,
                amplitude,
                frequency,
            } => {
                let theta = (p.z / p.norm()).clamp(-1.0, 1.0).acos();
                let (rho, _, _) = Self::bump(radius, amplitude, frequency, theta);
                (p.norm() - rho).abs() / radius
            }
            Self::Torus { major, minor } => {
                let d = p.x.hypot(p.y);
                ((d - major).hypot(p.z) - minor).abs() / major
            }
        }
    }

    /// Outward unit normal at a surface point.
    pub fn normal(&self, p: &Point) -> Point {
        match *self {
            Self::Sphere { .. } => p.normalize(),
            Self::Ellipsoid { a, b, c } => Point::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)).normalize(),
            Self::BumpedSphere {
                radius,
                amplitude,
                frequency,
            } => {
                let (theta, phi) = self.parameters(p);
                let (rho, d1, _) = Self::bump(radius, amplitude, frequency, theta);
                // meridian-plane normal in (distance from axis, z)
                let (s, c) = theta.sin_cos();
                let radial = rho * s - d1 * c;
                let axial = d1 * s + rho * c;
                Point::new(radial * phi.cos(), radial * phi.sin(), axial).normalize()
            }
            Self::Torus { major, .. } => {
                let ring = Point::new(p.x, p.y, 0.0).normalize() * major;
                (p - ring).normalize()
            }
        }
    }

    /// Principal curvatures at `p`, sorted ascending.
    pub fn exact_curvatures(&self, p: &Point) -> Result<CurvatureTuple> {
        let residual = self.residual(p);
        if !(residual <= ON_SURFACE_TOL) {
            return Err(Error::Domain(format!(
                "point ({}, {}, {}) is off the surface (residual {residual:e})",
                p.x, p.y, p.z
            )));
        }
        let (mut k1, mut k2) = match *self {
            Self::Sphere { radius } => (1.0 / radius, 1.0 / radius),
            Self::Ellipsoid { a, b, c } => {
                // shape operator of the level set x²/a² + y²/b² + z²/c² = 1
                let grad = 2.0 * Point::new(p.x / (a * a), p.y / (b * b), p.z / (c * c));
                let g = grad.norm();
                let n = grad / g;
                let hess = Matrix3::from_diagonal(&Point::new(2.0 / (a * a), 2.0 / (b * b), 2.0 / (c * c)));
                let (t1, t2) = tangent_basis(&n);
                let s = |x: &Point, y: &Point| x.dot(&(hess * y)) / g;
                let m = Matrix2::new(s(&t1, &t1), s(&t1, &t2), s(&t2, &t1), s(&t2, &t2));
                let e = m.symmetric_eigenvalues();
                (e[0], e[1])
            }
            Self::BumpedSphere {
                radius,
                amplitude,
                frequency,
            } => {
                let (theta, _) = self.parameters(p);
                let (rho, d1, d2) = Self::bump(radius, amplitude, frequency, theta);
                let speed = (rho * rho + d1 * d1).sqrt();
                let meridian = (rho * rho + 2.0 * d1 * d1 - rho * d2) / speed.powi(3);
                let s = theta.sin();
                let parallel = if s.abs() < 1e-7 {
                    meridian
                } else {
                    (rho * s - d1 * theta.cos()) / (rho * s * speed)
                };
                (meridian, parallel)
            }
            Self::Torus { major, minor } => {
                let d = p.x.hypot(p.y);
                let cos_v = (d - major) / minor;
                (cos_v / (major + minor * cos_v), 1.0 / minor)
            }
        };
        if k1 > k2 {
            std::mem::swap(&mut k1, &mut k2);
        }
        CurvatureTuple::new(vec![k1, k2])
    }

    fn seed_point(&self, unit: &Point) -> Point {
        match *self {
            Self::Sphere { radius } => unit * radius,
            Self::Ellipsoid { a, b, c } => Point::new(a * unit.x, b * unit.y, c * unit.z),
            Self::BumpedSphere {
                radius,
                amplitude,
                frequency,
            } => {
                let theta = unit.z.clamp(-1.0, 1.0).acos();
                unit * Self::bump(radius, amplitude, frequency, theta).0
            }
            Self::Torus { .. } => unreachable!("torus meshes are built on a grid"),
        }
    }
}

/// Orthonormal tangent pair completing `n` to a right-handed frame.
pub(crate) fn tangent_basis(n: &Point) -> (Point, Point) {
    let helper = if n.x.abs() < 0.6 {
        Point::x()
    } else if n.y.abs() < 0.6 {
        Point::y()
    } else {
        Point::z()
    };
    let t1 = (helper - n * n.dot(&helper)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

fn project_ellipsoid(a: f64, b: f64, c: f64, p: &Point) -> Option<Point> {
    // closest point x_i = p_i a_i² / (a_i² + t) with g(t) = Σ (p_i a_i / (a_i² + t))² - 1 = 0
    let axes = [a * a, b * b, c * c];
    let q = [p.x, p.y, p.z];
    let g = |t: f64| -> (f64, f64) {
        let mut val = -1.0;
        let mut der = 0.0;
        for i in 0..3 {
            let d = axes[i] + t;
            let w = q[i] * q[i] * axes[i];
            val += w / (d * d);
            der -= 2.0 * w / (d * d * d);
        }
        (val, der)
    };
    let min_axis = axes.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = -min_axis;
    let mut hi = {
        let mut h = 1.0f64.max(p.norm() * axes.iter().copied().fold(0.0, f64::max).sqrt());
        while g(h).0 > 0.0 {
            h *= 2.0;
            if h > 1e300 {
                return None;
            }
        }
        h
    };
    let mut t = 0.0f64.clamp(lo + 1e-12 * min_axis, hi);
    for _ in 0..200 {
        let (val, der) = g(t);
        if val > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = t - val / der;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-16 * (1.0 + t.abs()) {
            t = next;
            let x = Point::new(
                q[0] * axes[0] / (axes[0] + t),
                q[1] * axes[1] / (axes[1] + t),
                q[2] * axes[2] / (axes[2] + t),
            );
            return Some(x);
        }
        t = next;
    }
    None
}

impl Projector for AnalyticSurface {
    fn project(&self, p: &Point) -> Option<Point> {
        let x = match *self {
            Self::Sphere { radius } => p.try_normalize(0.0)? * radius,
            Self::Ellipsoid { a, b, c } => project_ellipsoid(a, b, c, p).filter(|x| self.residual(x) < 1e-12)?,
            Self::BumpedSphere {
                radius,
                amplitude,
                frequency,
            } => {
                let dir = p.try_normalize(0.0)?;
                let theta = dir.z.clamp(-1.0, 1.0).acos();
                dir * Self::bump(radius, amplitude, frequency, theta).0
            }
            Self::Torus { major, minor } => {
                let ring = Point::new(p.x, p.y, 0.0).try_normalize(0.0)? * major;
                ring + (p - ring).try_normalize(0.0)? * minor
            }
        };
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Samples the surface with a closed, outward-oriented mesh.
///
/// Sphere-like surfaces start from the icosahedron and are refined `subdiv`
/// times with projection; the torus uses a `8·2^subdiv × 4·2^subdiv` grid.
pub fn generate(surface: &AnalyticSurface, subdiv: u32) -> Result<TriMesh> {
    surface.check()?;
    if let AnalyticSurface::Torus { major, minor } = *surface {
        return torus_grid(major, minor, 8 << subdiv, 4 << subdiv);
    }
    let base = icosahedron();
    let vertices = base.vertices().iter().map(|p| surface.seed_point(p)).collect();
    let mut mesh = TriMesh::new(vertices, base.faces().to_vec())?;
    for _ in 0..subdiv {
        mesh = subdivide_project(&mesh, Some(surface))?;
    }
    Ok(mesh)
}

/// Structured `nu × nv` torus grid, each quad split into two triangles.
pub fn torus_grid(major: f64, minor: f64, nu: usize, nv: usize) -> Result<TriMesh> {
    let surface = AnalyticSurface::Torus { major, minor };
    surface.check()?;
    if nu < 3 || nv < 3 {
        return Err(Error::InvalidArgument(format!(
            "torus grid needs nu, nv >= 3, got {nu} x {nv}"
        )));
    }
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let u = 2.0 * PI * i as f64 / nu as f64;
            let v = 2.0 * PI * j as f64 / nv as f64;
            vertices.push(surface.point(u, v));
        }
    }
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(vertices, faces)
}
