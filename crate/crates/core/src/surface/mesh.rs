use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::geometry::{vec3, Vec3};
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        let n = vertices.len() as u32;
        assert!(triangles.iter().flatten().all(|&i| i < n), "triangle index out of range");
        TriMesh {
            vertices,
            triangles,
            normals: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    /// Twice-area vector (right-hand rule).
    fn cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, t: usize) -> Vec3 {
        self.cross(t).normalize()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.cross(t).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Enclosed volume, positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Area-weighted vertex normals.
    pub fn with_vertex_normals(mut self) -> Self {
        let mut n = vec![Vec3::zero(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let c = self.cross(t);
            for &i in &self.triangles[t] {
                n[i as usize] = n[i as usize] + c;
            }
        }
        self.normals = Some(
            n.into_iter()
                .map(|v| if v.norm() > 0.0 { v.normalize() } else { v })
                .collect(),
        );
        self
    }

    /// Number of undirected edges used by an odd number of triangles.
    pub fn boundary_edges(&self) -> usize {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().filter(|&&c| c % 2 == 1).count()
    }

    pub fn check_watertight(&self) -> Result<(), Error> {
        if self.is_empty() {
            return Err(Error::EmptyMesh);
        }
        match self.boundary_edges() {
            0 => Ok(()),
            n => Err(Error::NonWatertight(n)),
        }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = vec3(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for v in &self.vertices {
            lo = lo.min_elem(v);
            hi = hi.max_elem(v);
        }
        (lo, hi)
    }

    /// Generalized winding number: about 1 inside a closed outward mesh,
    /// about 0 outside.
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t).map(|v| v - *p);
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    pub fn translated(&self, t: Vec3) -> Self {
        TriMesh {
            vertices: self.vertices.iter().map(|v| *v + t).collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.clone(),
        }
    }

    /// Reflection `x -> -x` with the winding reversed, so normals stay
    /// outward.
    pub fn mirrored_x(&self) -> Self {
        let flip = |v: &Vec3| vec3(-v.x, v.y, v.z);
        TriMesh {
            vertices: self.vertices.iter().map(flip).collect(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            normals: self.normals.as_ref().map(|n| n.iter().map(flip).collect()),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        TriMesh {
            vertices: self.vertices.iter().map(|v| *v * s).collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.clone(),
        }
    }
}

/// Casts rays along +z through a mesh, binned in xy for speed. A point is
/// inside when an odd number of surface crossings lie above it.
pub struct ColumnCaster<'a> {
    mesh: &'a TriMesh,
    lo: (f64, f64),
    bin: f64,
    dims: (usize, usize),
    bins: Vec<Vec<u32>>,
}

/// Orientation of `p` against the edge `u → v`, computed on a canonical
/// endpoint order so both triangles sharing an edge see the same zero set.
fn edge_fn(u: (f64, f64), v: (f64, f64), p: (f64, f64)) -> f64 {
    let f = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    if u <= v {
        f(u, v)
    } else {
        -f(v, u)
    }
}

/// Tie rule for points exactly on an edge: only one of the two
/// triangles sharing it claims the point.
fn owns_edge(u: (f64, f64), v: (f64, f64)) -> bool {
    let (dx, dy) = (v.0 - u.0, v.1 - u.1);
    dy < 0.0 || (dy == 0.0 && dx < 0.0)
}

impl<'a> ColumnCaster<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let (lo, hi) = mesh.bounds();
        let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-9);
        let target = (mesh.triangles.len() as f64).sqrt().max(1.0);
        let bin = span / target;
        let dims = (
            (((hi.x - lo.x) / bin) as usize + 1).max(1),
            (((hi.y - lo.y) / bin) as usize + 1).max(1),
        );
        let mut bins = vec![Vec::new(); dims.0 * dims.1];
        for t in 0..mesh.triangles.len() {
            let c = mesh.corners(t);
            let cell = |v: f64, o: f64, n: usize| (((v - o) / bin) as usize).min(n - 1);
            let (x0, x1) = (
                cell(c.iter().map(|v| v.x).fold(f64::INFINITY, f64::min), lo.x, dims.0),
                cell(c.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max), lo.x, dims.0),
            );
            let (y0, y1) = (
                cell(c.iter().map(|v| v.y).fold(f64::INFINITY, f64::min), lo.y, dims.1),
                cell(c.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max), lo.y, dims.1),
            );
            for x in x0..=x1 {
                for y in y0..=y1 {
                    bins[x * dims.1 + y].push(t as u32);
                }
            }
        }
        ColumnCaster {
            mesh,
            lo: (lo.x, lo.y),
            bin,
            dims,
            bins,
        }
    }

    /// Heights where the vertical line through `(x, y)` crosses the mesh,
    /// ascending.
    pub fn crossings(&self, x: f64, y: f64) -> Vec<f64> {
        let fx = (x - self.lo.0) / self.bin;
        let fy = (y - self.lo.1) / self.bin;
        if fx < 0.0 || fy < 0.0 || fx >= self.dims.0 as f64 || fy >= self.dims.1 as f64 {
            return Vec::new();
        }
        let p = (x, y);
        let mut zs = Vec::new();
        for &t in &self.bins[fx as usize * self.dims.1 + fy as usize] {
            let [a, b, c] = self.mesh.corners(t as usize);
            let a2 = (a.x, a.y);
            let (mut b2, mut c2) = ((b.x, b.y), (c.x, c.y));
            let za = a.z;
            let (mut zb, mut zc) = (b.z, c.z);
            let area = edge_fn(a2, b2, c2);
            if area == 0.0 {
                continue;
            }
            if area < 0.0 {
                std::mem::swap(&mut b2, &mut c2);
                std::mem::swap(&mut zb, &mut zc);
            }
            let w = [edge_fn(b2, c2, p), edge_fn(c2, a2, p), edge_fn(a2, b2, p)];
            let edges = [(b2, c2), (c2, a2), (a2, b2)];
            let hit = w
                .iter()
                .zip(&edges)
                .all(|(&wi, &(u, v))| wi > 0.0 || (wi == 0.0 && owns_edge(u, v)));
            if hit {
                let s = w[0] + w[1] + w[2];
                zs.push((w[0] * za + w[1] * zb + w[2] * zc) / s);
            }
        }
        zs.sort_by(f64::total_cmp);
        zs
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.crossings(p.x, p.y).iter().filter(|&&z| z > p.z).count() % 2 == 1
    }
}

/// Writes a Wavefront OBJ (millimeters, 1-based indices), optionally with
/// per-vertex colors appended to the `v` lines.
pub fn write_obj(mesh: &TriMesh, path: &Path, colors: Option<&[[f64; 3]]>) -> Result<(), Error> {
    if let Some(c) = colors {
        if c.len() != mesh.vertices.len() {
            return Err(Error::ShapeMismatch {
                expected: mesh.vertices.len(),
                got: c.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(40 * (mesh.vertices.len() + mesh.triangles.len()));
    for (i, v) in mesh.vertices.iter().enumerate() {
        match colors {
            Some(c) => writeln!(out, "v {:.6} {:.6} {:.6} {:.4} {:.4} {:.4}", v.x, v.y, v.z, c[i][0], c[i][1], c[i][2]),
            None => writeln!(out, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z),
        }
        .expect("writing to memory");
    }
    if let Some(n) = &mesh.normals {
        for v in n {
            writeln!(out, "vn {:.6} {:.6} {:.6}", v.x, v.y, v.z).expect("writing to memory");
        }
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        if mesh.normals.is_some() {
            writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}")
        } else {
            writeln!(out, "f {a} {b} {c}")
        }
        .expect("writing to memory");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
