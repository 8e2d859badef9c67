//! Marching cubes with a case table generated from face rules.
//!
//! Each of the 256 corner sign patterns is turned into closed contour loops
//! by walking the six cube faces. On a face with two opposite inside corners
//! the inside corners are always separated; the rule only sees the face's
//! own corners, so neighboring cubes agree and the mesh is closed.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::geometry::Vec3;
use crate::Error;

use super::{GridSpec, TriMesh};

/// Corner `i` sits at `(i & 1, (i >> 1) & 1, (i >> 2) & 1)`.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Face corners, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

fn edge_index(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == key).expect("corners share an edge")
}

/// Contour loops (as cube edge indices) for one corner pattern.
pub(crate) fn case_loops(case: u8) -> Vec<Vec<u8>> {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut next = [usize::MAX; 12];
    for f in &FACES {
        let s: [bool; 4] = std::array::from_fn(|k| inside(f[k]));
        let edge = |k: usize| edge_index(f[k % 4], f[(k + 1) % 4]);
        let crossings = (0..4).filter(|&k| s[k] != s[(k + 1) % 4]).count();
        match crossings {
            0 => {}
            2 => {
                let leave = (0..4).find(|&k| s[k] && !s[(k + 1) % 4]).unwrap();
                let enter = (0..4).find(|&k| !s[k] && s[(k + 1) % 4]).unwrap();
                next[edge(leave)] = edge(enter);
            }
            4 => {
                for k in (0..4).filter(|&k| s[k]) {
                    next[edge(k)] = edge(k + 3);
                }
            }
            _ => unreachable!("a square has an even number of sign changes"),
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut l = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            l.push(e as u8);
            e = next[e];
        }
        debug_assert_eq!(e, start);
        loops.push(l);
    }
    loops
}

pub(crate) fn table() -> &'static [Vec<Vec<u8>>] {
    static TABLE: OnceLock<Vec<Vec<Vec<u8>>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(case_loops).collect())
}

/// Minimum distance of an interpolated vertex from a grid corner, in units
/// of the edge length; keeps triangles from collapsing when a sample equals
/// the iso level.
const EDGE_CLAMP: f64 = 1e-4;
const MIN_AREA: f64 = 1e-12;

/// Extracts the iso surface from sampled values (`g.index` layout). Samples
/// on the grid boundary are treated as outside, so the mesh is always
/// closed. Inside means `value > iso`.
pub fn mesh_from_values(values: &[f64], g: &GridSpec) -> Result<TriMesh, Error> {
    let [nx, ny, nz] = g.resolution;
    assert_eq!(values.len(), nx * ny * nz);
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("field value {v} is not finite")));
    }
    let table = table();
    let boundary = |i: usize, j: usize, k: usize| i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
    let inside = |i: usize, j: usize, k: usize| !boundary(i, j, k) && values[g.index(i, j, k)] > g.iso;
    let value = |i: usize, j: usize, k: usize| {
        let v = values[g.index(i, j, k)];
        if boundary(i, j, k) {
            v.min(g.iso)
        } else {
            v
        }
    };
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut ids: HashMap<(usize, u8), u32> = HashMap::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let corner = |c: usize| (i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1));
                let mut case = 0u8;
                for c in 0..8 {
                    let (a, b, d) = corner(c);
                    if inside(a, b, d) {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for l in &table[case as usize] {
                    let vids: Vec<u32> = l
                        .iter()
                        .map(|&e| {
                            let (ca, cb) = EDGES[e as usize];
                            let pa = corner(ca);
                            let pb = corner(cb);
                            let axis = (ca ^ cb).trailing_zeros() as u8;
                            *ids.entry((g.index(pa.0, pa.1, pa.2), axis)).or_insert_with(|| {
                                let va = value(pa.0, pa.1, pa.2);
                                let vb = value(pb.0, pb.1, pb.2);
                                let t = ((g.iso - va) / (vb - va)).clamp(EDGE_CLAMP, 1.0 - EDGE_CLAMP);
                                let a = g.point(pa.0, pa.1, pa.2);
                                let b = g.point(pb.0, pb.1, pb.2);
                                vertices.push(a + (b - a) * t);
                                (vertices.len() - 1) as u32
                            })
                        })
                        .collect();
                    // reversed fan: outward normals
                    for m in 1..vids.len() - 1 {
                        let tri = [vids[0], vids[m + 1], vids[m]];
                        let area = 0.5
                            * (vertices[tri[1] as usize] - vertices[tri[0] as usize])
                                .cross(&(vertices[tri[2] as usize] - vertices[tri[0] as usize]))
                                .norm();
                        if area > MIN_AREA {
                            triangles.push(tri);
                        }
                    }
                }
            }
        }
    }
    if triangles.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(TriMesh::new(vertices, triangles))
}

/// Samples `field` on every grid point and extracts the iso surface.
pub fn marching_cubes<F>(field: F, g: &GridSpec) -> Result<TriMesh, Error>
where
    F: Fn(&[Vec3]) -> Result<Vec<f64>, Error>,
{
    g.validate()?;
    let values = field(&g.points())?;
    if values.len() != g.len() {
        return Err(Error::ShapeMismatch {
            expected: g.len(),
            got: values.len(),
        });
    }
    mesh_from_values(&values, g)
}

/// Like [`marching_cubes`], but samples a lattice `stride` times coarser
/// first and refines only blocks within one coarse step of an inside
/// sample. Features thinner than the coarse spacing can be missed.
pub fn marching_cubes_adaptive<F>(field: F, g: &GridSpec, stride: usize) -> Result<TriMesh, Error>
where
    F: Fn(&[Vec3]) -> Result<Vec<f64>, Error>,
{
    g.validate()?;
    if stride <= 1 {
        return marching_cubes(field, g);
    }
    let [nx, ny, nz] = g.resolution;
    let coarse_axis = |n: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).step_by(stride).collect();
        if *v.last().unwrap() != n - 1 {
            v.push(n - 1);
        }
        v
    };
    let (cx, cy, cz) = (coarse_axis(nx), coarse_axis(ny), coarse_axis(nz));
    let mut coarse_idx = Vec::with_capacity(cx.len() * cy.len() * cz.len());
    for &i in &cx {
        for &j in &cy {
            for &k in &cz {
                coarse_idx.push((i, j, k));
            }
        }
    }
    let pts: Vec<Vec3> = coarse_idx.iter().map(|&(i, j, k)| g.point(i, j, k)).collect();
    let vals = field(&pts)?;
    if vals.len() != pts.len() {
        return Err(Error::ShapeMismatch {
            expected: pts.len(),
            got: vals.len(),
        });
    }
    let fill = g.iso - 1.0;
    let mut values = vec![fill; g.len()];
    let mut known = vec![false; g.len()];
    // active blocks: coarse cells touching an inside coarse sample, dilated
    let (bx, by, bz) = (cx.len() - 1, cy.len() - 1, cz.len() - 1);
    let mut active = vec![false; bx * by * bz];
    let bidx = |a: usize, b: usize, c: usize| (a * by + b) * bz + c;
    for (n, &(i, j, k)) in coarse_idx.iter().enumerate() {
        let id = g.index(i, j, k);
        values[id] = vals[n];
        known[id] = true;
        if vals[n] > g.iso {
            let (a, b, c) = (n / (cy.len() * cz.len()), n / cz.len() % cy.len(), n % cz.len());
            let span = |x: usize, len: usize| x.saturating_sub(2)..(x + 2).min(len);
            for p in span(a, bx) {
                for q in span(b, by) {
                    for r in span(c, bz) {
                        active[bidx(p, q, r)] = true;
                    }
                }
            }
        }
    }
    let mut todo = Vec::new();
    for a in 0..bx {
        for b in 0..by {
            for c in 0..bz {
                if !active[bidx(a, b, c)] {
                    continue;
                }
                for i in cx[a]..=cx[a + 1] {
                    for j in cy[b]..=cy[b + 1] {
                        for k in cz[c]..=cz[c + 1] {
                            let id = g.index(i, j, k);
                            if !known[id] {
                                known[id] = true;
                                todo.push(id);
                            }
                        }
                    }
                }
            }
        }
    }
    let pts: Vec<Vec3> = todo.iter().map(|&id| g.point_of_index(id)).collect();
    let vals = field(&pts)?;
    if vals.len() != pts.len() {
        return Err(Error::ShapeMismatch {
            expected: pts.len(),
            got: vals.len(),
        });
    }
    for (&id, v) in todo.iter().zip(vals) {
        values[id] = v;
    }
    mesh_from_values(&values, g)
}

/// Wraps a per-point function as a batched field, evaluated in parallel.
pub fn pointwise<F>(f: F) -> impl Fn(&[Vec3]) -> Result<Vec<f64>, Error>
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    move |pts: &[Vec3]| Ok(crate::par::map_slice(pts, &f))
}
