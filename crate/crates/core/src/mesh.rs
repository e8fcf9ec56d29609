//! Indexed closed triangle meshes: validation, measures, I/O and refinement.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Unvalidated vertex/face soup as read from disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawMesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

/// A closed, consistently oriented triangle surface with derived measures.
///
/// Faces are counter-clockwise seen from outside. The derived per-face and
/// per-vertex quantities are computed once at construction.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Point>,
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    face_areas: Vec<f64>,
    face_normals: Vec<Point>,
    vertex_areas: Vec<f64>,
    vertex_normals: Vec<Point>,
    vertex_faces: Vec<Vec<usize>>,
    components: Vec<usize>,
    component_count: usize,
}

/// Outcome of the structural and geometric checks on a mesh.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValidationReport {
    pub vertex_count: usize,
    pub face_count: usize,
    pub edge_count: usize,
    pub euler_characteristic: i64,
    pub components: usize,
    pub closed: bool,
    pub boundary_edges: Vec<[usize; 2]>,
    pub non_manifold_edges: Vec<[usize; 2]>,
    pub orientation_consistent: bool,
    /// Faces whose winding disagrees with the majority of their component.
    pub flipped_faces: Vec<usize>,
    pub degenerate_faces: Vec<usize>,
    pub invalid_indices: Vec<usize>,
    pub min_face_area: f64,
    pub max_face_area: f64,
    /// Longest edge over shortest altitude, scaled so an equilateral
    /// triangle has ratio 1.
    pub max_aspect_ratio: f64,
    pub passes: bool,
}

/// Maps a point near a surface onto it.
pub trait Projector {
    fn project(&self, p: &Point) -> Option<Point>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(Self::Off),
            "obj" => Some(Self::Obj),
            _ => None,
        }
    }
}

fn triangle_area_normal(a: &Point, b: &Point, c: &Point) -> (f64, Point) {
    let cross = (b - a).cross(&(c - a));
    let norm = cross.norm();
    let normal = if norm > 0.0 { cross / norm } else { Point::zeros() };
    (0.5 * norm, normal)
}

fn aspect_ratio(a: &Point, b: &Point, c: &Point) -> f64 {
    let (area, _) = triangle_area_normal(a, b, c);
    let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
    if area <= 0.0 {
        return f64::INFINITY;
    }
    longest * longest / (2.0 * area) * (3f64.sqrt() / 2.0)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Per-vertex component labels (0-based, ordered by first vertex) and the
/// number of components.
fn vertex_components(n: usize, faces: &[[usize; 3]]) -> (Vec<usize>, usize) {
    let mut uf = UnionFind::new(n);
    for f in faces {
        uf.union(f[0], f[1]);
        uf.union(f[1], f[2]);
    }
    let mut label = vec![usize::MAX; n];
    let mut roots = HashMap::new();
    for v in 0..n {
        let root = uf.find(v);
        let next = roots.len();
        label[v] = *roots.entry(root).or_insert(next);
    }
    (label, roots.len())
}

/// Checks closedness, manifoldness, orientation and face quality.
pub fn validate(raw: &RawMesh) -> ValidationReport {
    let n = raw.vertices.len();
    let invalid_indices: Vec<usize> = raw
        .faces
        .iter()
        .enumerate()
        .filter(|(_, f)| f.iter().any(|&i| i >= n) || f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
        .map(|(i, _)| i)
        .collect();
    let faces: Vec<[usize; 3]> = if invalid_indices.is_empty() {
        raw.faces.clone()
    } else {
        raw.faces
            .iter()
            .enumerate()
            .filter(|(i, _)| invalid_indices.binary_search(i).is_err())
            .map(|(_, f)| *f)
            .collect()
    };

    // undirected edge -> list of (face, forward?) where forward means the
    // face traverses it from the smaller to the larger index
    let mut edge_faces: HashMap<[usize; 2], Vec<(usize, bool)>> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edge_faces.entry([a.min(b), a.max(b)]).or_default().push((fi, a < b));
        }
    }
    let mut boundary_edges = Vec::new();
    let mut non_manifold_edges = Vec::new();
    let mut conflicts = false;
    for (e, fs) in &edge_faces {
        match fs.len() {
            1 => boundary_edges.push(*e),
            2 => conflicts |= fs[0].1 == fs[1].1,
            _ => non_manifold_edges.push(*e),
        }
    }
    boundary_edges.sort_unstable();
    non_manifold_edges.sort_unstable();

    // Propagate orientation parity through manifold edges; faces with odd
    // parity relative to the majority of their component are "flipped".
    let mut flipped_faces = Vec::new();
    if conflicts {
        let mut parity: Vec<Option<bool>> = vec![None; faces.len()];
        let mut adjacency: Vec<Vec<(usize, bool)>> = vec![Vec::new(); faces.len()];
        for fs in edge_faces.values().filter(|fs| fs.len() == 2) {
            // same traversal direction => relative flip
            let flip = fs[0].1 == fs[1].1;
            adjacency[fs[0].0].push((fs[1].0, flip));
            adjacency[fs[1].0].push((fs[0].0, flip));
        }
        for seed in 0..faces.len() {
            if parity[seed].is_some() {
                continue;
            }
            parity[seed] = Some(false);
            let mut members = vec![seed];
            let mut stack = vec![seed];
            while let Some(f) = stack.pop() {
                let pf = parity[f].unwrap();
                for &(g, flip) in &adjacency[f] {
                    if parity[g].is_none() {
                        parity[g] = Some(pf ^ flip);
                        members.push(g);
                        stack.push(g);
                    }
                }
            }
            let odd = members.iter().filter(|&&f| parity[f] == Some(true)).count();
            let minority = odd * 2 <= members.len();
            flipped_faces.extend(members.into_iter().filter(|&f| parity[f] == Some(minority)));
        }
        flipped_faces.sort_unstable();
    }

    let areas: Vec<f64> = faces
        .iter()
        .map(|f| triangle_area_normal(&raw.vertices[f[0]], &raw.vertices[f[1]], &raw.vertices[f[2]]).0)
        .collect();
    let mean_area = areas.iter().sum::<f64>() / areas.len().max(1) as f64;
    let degenerate_faces: Vec<usize> = areas
        .iter()
        .enumerate()
        .filter(|(_, &a)| !(a > 1e-14 * mean_area))
        .map(|(i, _)| i)
        .collect();
    let min_face_area = areas.iter().copied().fold(f64::INFINITY, f64::min);
    let max_face_area = areas.iter().copied().fold(0.0, f64::max);
    let max_aspect_ratio = faces
        .iter()
        .map(|f| aspect_ratio(&raw.vertices[f[0]], &raw.vertices[f[1]], &raw.vertices[f[2]]))
        .fold(0.0, f64::max);

    let (_, components) = vertex_components(n, &faces);
    let edge_count = edge_faces.len();
    let closed = boundary_edges.is_empty() && non_manifold_edges.is_empty();
    let orientation_consistent = !conflicts;
    let passes = closed
        && orientation_consistent
        && degenerate_faces.is_empty()
        && invalid_indices.is_empty()
        && !faces.is_empty();
    ValidationReport {
        vertex_count: n,
        face_count: raw.faces.len(),
        edge_count,
        euler_characteristic: n as i64 - edge_count as i64 + faces.len() as i64,
        components,
        closed,
        boundary_edges,
        non_manifold_edges,
        orientation_consistent,
        flipped_faces,
        degenerate_faces,
        invalid_indices,
        min_face_area,
        max_face_area,
        max_aspect_ratio,
        passes,
    }
}

impl TryFrom<RawMesh> for TriMesh {
    type Error = Error;

    fn try_from(raw: RawMesh) -> Result<Self> {
        TriMesh::new(raw.vertices, raw.faces)
    }
}

impl TriMesh {
    /// Validates and builds a mesh; each failed invariant maps to its own
    /// error variant.
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let raw = RawMesh { vertices, faces };
        let report = validate(&raw);
        if let Some(&f) = report.invalid_indices.first() {
            return Err(Error::InvalidArgument(format!(
                "face {f} has out-of-range or repeated vertex indices"
            )));
        }
        if raw.faces.is_empty() {
            return Err(Error::InvalidArgument("mesh has no faces".into()));
        }
        if let Some(e) = report.non_manifold_edges.first() {
            let count = raw
                .faces
                .iter()
                .filter(|f| (0..3).any(|k| [f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3])] == *e))
                .count();
            return Err(Error::NonManifoldEdge {
                a: e[0],
                b: e[1],
                count,
            });
        }
        if let Some(e) = report.boundary_edges.first() {
            return Err(Error::OpenBoundary { a: e[0], b: e[1] });
        }
        if !report.orientation_consistent {
            let face = report.flipped_faces.first().copied().unwrap_or(0);
            let f = raw.faces[face];
            return Err(Error::InconsistentOrientation { face, a: f[0], b: f[1] });
        }
        if let Some(&f) = report.degenerate_faces.first() {
            return Err(Error::DegenerateGeometry(format!("face {f} has (near) zero area")));
        }
        Self::build(raw.vertices, raw.faces)
    }

    fn build(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        let mut edges: Vec<[usize; 2]> = faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| [f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3])]))
            .collect();
        edges.sort_unstable();
        edges.dedup();

        let mut face_areas = Vec::with_capacity(faces.len());
        let mut face_normals = Vec::with_capacity(faces.len());
        let mut vertex_areas = vec![0.0; n];
        let mut vertex_normals = vec![Point::zeros(); n];
        let mut vertex_faces = vec![Vec::new(); n];
        for (fi, f) in faces.iter().enumerate() {
            let p = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
            let (area, normal) = triangle_area_normal(&p[0], &p[1], &p[2]);
            face_areas.push(area);
            face_normals.push(normal);
            for k in 0..3 {
                let v = f[k];
                vertex_areas[v] += area / 3.0;
                vertex_faces[v].push(fi);
                let u = p[(k + 1) % 3] - p[k];
                let w = p[(k + 2) % 3] - p[k];
                vertex_normals[v] += u.cross(&w) / (u.norm_squared() * w.norm_squared());
            }
        }
        for (v, nrm) in vertex_normals.iter_mut().enumerate() {
            if vertex_faces[v].is_empty() {
                continue;
            }
            let len = nrm.norm();
            if !(len > 0.0) {
                return Err(Error::DegenerateGeometry(format!("vertex {v} has a vanishing normal")));
            }
            *nrm /= len;
        }
        let (components, component_count) = vertex_components(n, &faces);
        Ok(Self {
            vertices,
            faces,
            edges,
            face_areas,
            face_normals,
            vertex_areas,
            vertex_normals,
            vertex_faces,
            components,
            component_count,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }
    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }
    pub fn face_normals(&self) -> &[Point] {
        &self.face_normals
    }
    /// Barycentric vertex areas (one third of each incident face).
    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }
    /// Unit vertex normals with Max's weights (exact for vertices on a sphere).
    pub fn vertex_normals(&self) -> &[Point] {
        &self.vertex_normals
    }
    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        &self.vertex_faces[v]
    }
    /// Connected-component label of each vertex.
    pub fn components(&self) -> &[usize] {
        &self.components
    }
    pub fn component_count(&self) -> usize {
        self.component_count
    }
    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    pub fn validate(&self) -> ValidationReport {
        validate(&self.to_raw())
    }

    pub fn to_raw(&self) -> RawMesh {
        RawMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.clone(),
        }
    }

    /// Area-weighted mean vertex position.
    pub fn centroid(&self) -> Point {
        let total: f64 = self.vertex_areas.iter().sum();
        self.vertices
            .iter()
            .zip(&self.vertex_areas)
            .fold(Point::zeros(), |acc, (p, a)| acc + p * *a)
            / total
    }

    /// Uniformly scaled copy.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::build(self.vertices.iter().map(|p| p * s).collect(), self.faces.clone())
    }
}

/// Vertex areas and unit normals, checking that every vertex is covered by
/// at least one non-degenerate face.
pub fn vertex_measures(mesh: &TriMesh) -> Result<(Vec<f64>, Vec<Point>)> {
    if let Some(v) = mesh.vertex_areas().iter().position(|&a| !(a > 0.0)) {
        return Err(Error::DegenerateGeometry(format!("vertex {v} has zero incident area")));
    }
    Ok((mesh.vertex_areas().to_vec(), mesh.vertex_normals().to_vec()))
}

/// 1-to-4 midpoint subdivision; with a target, every new vertex is projected
/// onto it.
pub fn subdivide_project(mesh: &TriMesh, target: Option<&dyn Projector>) -> Result<TriMesh> {
    let mut vertices = mesh.vertices().to_vec();
    let mut midpoint: HashMap<[usize; 2], usize> = HashMap::with_capacity(mesh.edge_count());
    for e in mesh.edges() {
        let idx = vertices.len();
        let mid = 0.5 * (vertices[e[0]] + vertices[e[1]]);
        let p = match target {
            Some(t) => t.project(&mid).ok_or(Error::Projection { vertex: idx })?,
            None => mid,
        };
        vertices.push(p);
        midpoint.insert(*e, idx);
    }
    let mid = |a: usize, b: usize| midpoint[&[a.min(b), a.max(b)]];
    let mut faces = Vec::with_capacity(4 * mesh.face_count());
    for &[a, b, c] in mesh.faces() {
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        faces.push([a, ab, ca]);
        faces.push([ab, b, bc]);
        faces.push([ca, bc, c]);
        faces.push([ab, bc, ca]);
    }
    TriMesh::new(vertices, faces)
}

/// Reads an OFF or OBJ file, choosing the format from the extension when
/// `format` is `None`.
pub fn load_mesh(path: &Path, format: Option<MeshFormat>) -> Result<TriMesh> {
    TriMesh::try_from(load_raw(path, format)?)
}

pub fn load_raw(path: &Path, format: Option<MeshFormat>) -> Result<RawMesh> {
    let format = format
        .or_else(|| MeshFormat::from_path(path))
        .ok_or_else(|| Error::InvalidArgument(format!("cannot infer mesh format of {}", path.display())))?;
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        MeshFormat::Off => parse_off(&text),
        MeshFormat::Obj => parse_obj(&text),
    }
}

fn fan(poly: &[usize], faces: &mut Vec<[usize; 3]>) {
    for k in 1..poly.len() - 1 {
        faces.push([poly[0], poly[k], poly[k + 1]]);
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

pub fn parse_off(text: &str) -> Result<RawMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(hl, "expected 'OFF' header"))?
        .trim();
    let (cl, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| parse_err(hl + 1, "missing counts line"))?
    } else {
        (hl, rest)
    };
    let mut tok = counts.split_whitespace();
    let nv: usize = parse_num(tok.next(), cl, "vertex count")?;
    let nf: usize = parse_num(tok.next(), cl, "face count")?;

    let mut raw = RawMesh::default();
    raw.vertices.reserve(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(cl, "unexpected end of vertex list"))?;
        let mut t = l.split_whitespace();
        let x = parse_num(t.next(), ln, "x coordinate")?;
        let y = parse_num(t.next(), ln, "y coordinate")?;
        let z = parse_num(t.next(), ln, "z coordinate")?;
        raw.vertices.push(Point::new(x, y, z));
    }
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(cl, "unexpected end of face list"))?;
        let mut t = l.split_whitespace();
        let k: usize = parse_num(t.next(), ln, "face size")?;
        if k < 3 {
            return Err(parse_err(ln, format!("face with {k} vertices")));
        }
        let poly = (0..k)
            .map(|_| {
                let i: usize = parse_num(t.next(), ln, "vertex index")?;
                if i >= nv {
                    return Err(parse_err(ln, format!("vertex index {i} out of range")));
                }
                Ok(i)
            })
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut raw.faces);
    }
    Ok(raw)
}

pub fn parse_obj(text: &str) -> Result<RawMesh> {
    let mut raw = RawMesh::default();
    let mut polys: Vec<(usize, Vec<i64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut t = line.split_whitespace();
        match t.next() {
            Some("v") => {
                let x = parse_num(t.next(), ln, "x coordinate")?;
                let y = parse_num(t.next(), ln, "y coordinate")?;
                let z = parse_num(t.next(), ln, "z coordinate")?;
                raw.vertices.push(Point::new(x, y, z));
            }
            Some("f") => {
                let idx = t
                    .map(|tok| parse_num::<i64>(tok.split('/').next(), ln, "vertex index"))
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(ln, format!("face with {} vertices", idx.len())));
                }
                polys.push((ln, idx));
            }
            _ => {}
        }
    }
    let nv = raw.vertices.len() as i64;
    for (ln, idx) in polys {
        let poly = idx
            .into_iter()
            .map(|i| {
                let z = if i < 0 { nv + i } else { i - 1 };
                if z < 0 || z >= nv {
                    return Err(parse_err(ln, format!("vertex index {i} out of range")));
                }
                Ok(z as usize)
            })
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut raw.faces);
    }
    Ok(raw)
}

/// Writes ASCII OFF with shortest round-trip float formatting.
pub fn write_off<W: Write>(raw: &RawMesh, mut out: W) -> std::io::Result<()> {
    let edges = {
        let mut e: Vec<[usize; 2]> = raw
            .faces
            .iter()
            .flat_map(|f| (0..3).map(move |k| [f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3])]))
            .collect();
        e.sort_unstable();
        e.dedup();
        e.len()
    };
    writeln!(out, "OFF")?;
    writeln!(out, "{} {} {}", raw.vertices.len(), raw.faces.len(), edges)?;
    for p in &raw.vertices {
        writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
    }
    for f in &raw.faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

pub fn save_off(mesh: &TriMesh, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io)?;
    write_off(&mesh.to_raw(), std::io::BufWriter::new(file)).map_err(io)
}

/// The regular icosahedron inscribed in the unit sphere, outward oriented.
pub fn icosahedron() -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let vertices = raw.iter().map(|p| Point::new(p[0], p[1], p[2]).normalize()).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriMesh::new(vertices, faces).expect("icosahedron is a valid closed mesh")
}
