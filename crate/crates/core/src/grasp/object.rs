//! Analytic and mesh objects with exact inside tests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{vec3, Mat3, Vec3};
use crate::surface::{marching_cubes, pointwise, GridSpec, TriMesh};
use crate::training::uniform_in_box;
use crate::Error;

fn identity() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn z_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

/// A rigid object in millimeters. Serialized with a `kind` tag, e.g.
/// `{"kind":"sphere","radius_mm":30,"center":[0,0,0]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectShape {
    Sphere {
        radius_mm: f64,
        center: [f64; 3],
    },
    /// Edge lengths `size_mm` along the columns of `rotation` (rows as
    /// given in JSON are matrix rows).
    Box {
        size_mm: [f64; 3],
        center: [f64; 3],
        #[serde(default = "identity")]
        rotation: [[f64; 3]; 3],
    },
    Cylinder {
        radius_mm: f64,
        height_mm: f64,
        center: [f64; 3],
        #[serde(default = "z_axis")]
        axis: [f64; 3],
    },
    /// Closed triangle mesh; inside means winding number 1.
    Mesh {
        vertices: Vec<[f64; 3]>,
        triangles: Vec<[u32; 3]>,
    },
}

fn v(a: &[f64; 3]) -> Vec3 {
    Vec3::from_array(*a)
}

fn rot(r: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::from_cols(
        vec3(r[0][0], r[1][0], r[2][0]),
        vec3(r[0][1], r[1][1], r[2][1]),
        vec3(r[0][2], r[1][2], r[2][2]),
    )
}

impl ObjectShape {
    pub fn sphere(radius_mm: f64, center: Vec3) -> Self {
        ObjectShape::Sphere {
            radius_mm,
            center: center.to_array(),
        }
    }

    pub fn axis_box(size_mm: [f64; 3], center: Vec3) -> Self {
        ObjectShape::Box {
            size_mm,
            center: center.to_array(),
            rotation: identity(),
        }
    }

    pub fn cylinder(radius_mm: f64, height_mm: f64, center: Vec3, axis: Vec3) -> Self {
        ObjectShape::Cylinder {
            radius_mm,
            height_mm,
            center: center.to_array(),
            axis: axis.to_array(),
        }
    }

    pub fn from_mesh(mesh: &TriMesh) -> Self {
        ObjectShape::Mesh {
            vertices: mesh.vertices.iter().map(Vec3::to_array).collect(),
            triangles: mesh.triangles.clone(),
        }
    }

    fn tri_mesh(&self) -> Option<TriMesh> {
        match self {
            ObjectShape::Mesh { vertices, triangles } => Some(TriMesh::new(
                vertices.iter().map(v).collect(),
                triangles.clone(),
            )),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let finite = |a: &[f64; 3]| a.iter().all(|x| x.is_finite());
        match self {
            ObjectShape::Sphere { radius_mm, center } => {
                if !(*radius_mm > 0.0) || !finite(center) {
                    return bad("sphere needs a positive radius and a finite center");
                }
            }
            ObjectShape::Box {
                size_mm,
                center,
                rotation,
            } => {
                if !size_mm.iter().all(|s| *s > 0.0) || !finite(center) {
                    return bad("box needs positive sizes and a finite center");
                }
                let r = rot(rotation);
                if !(r.orthonormality_error() < 1e-6 && r.det() > 0.0) {
                    return bad("box rotation must be a proper rotation");
                }
            }
            ObjectShape::Cylinder {
                radius_mm,
                height_mm,
                center,
                axis,
            } => {
                if !(*radius_mm > 0.0 && *height_mm > 0.0) || !finite(center) {
                    return bad("cylinder needs positive radius and height and a finite center");
                }
                if !(v(axis).norm() > 1e-9) {
                    return bad("cylinder axis must be non-zero");
                }
            }
            ObjectShape::Mesh { vertices, triangles } => {
                if vertices.iter().any(|p| !finite(p)) {
                    return bad("mesh vertices must be finite");
                }
                if triangles.iter().flatten().any(|&i| i as usize >= vertices.len()) {
                    return bad("mesh triangle index out of range");
                }
                let m = self.tri_mesh().expect("mesh variant");
                if m.is_empty() {
                    return Err(Error::EmptyMesh);
                }
                m.check_watertight()?;
            }
        }
        Ok(())
    }

    /// Signed distance for primitives (negative inside). Meshes have none.
    pub fn sdf(&self, p: &Vec3) -> Option<f64> {
        match self {
            ObjectShape::Sphere { radius_mm, center } => Some(p.dist(&v(center)) - radius_mm),
            ObjectShape::Box {
                size_mm,
                center,
                rotation,
            } => {
                let l = rot(rotation).transpose().mul_vec(&(*p - v(center)));
                let q = [l.x.abs() - 0.5 * size_mm[0], l.y.abs() - 0.5 * size_mm[1], l.z.abs() - 0.5 * size_mm[2]];
                let outside = vec3(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)).norm();
                Some(outside + q[0].max(q[1]).max(q[2]).min(0.0))
            }
            ObjectShape::Cylinder {
                radius_mm,
                height_mm,
                center,
                axis,
            } => {
                let a = v(axis).normalize();
                let d = *p - v(center);
                let h = d.dot(&a);
                let radial = (d - a * h).norm();
                let (dx, dy) = (radial - radius_mm, h.abs() - 0.5 * height_mm);
                Some(dx.max(dy).min(0.0) + vec3(dx.max(0.0), dy.max(0.0), 0.0).norm())
            }
            ObjectShape::Mesh { .. } => None,
        }
    }

    /// Strict inside test.
    pub fn contains(&self, p: &Vec3) -> bool {
        match self.sdf(p) {
            Some(d) => d < 0.0,
            None => self.tri_mesh().is_some_and(|m| m.winding_number(p) > 0.5),
        }
    }

    /// Axis-aligned bounds.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            ObjectShape::Sphere { radius_mm, center } => {
                let r = vec3(*radius_mm, *radius_mm, *radius_mm);
                (v(center) - r, v(center) + r)
            }
            ObjectShape::Box {
                size_mm,
                center,
                rotation,
            } => {
                let r = rot(rotation);
                let e: [f64; 3] = std::array::from_fn(|i| {
                    (0..3).map(|j| 0.5 * size_mm[j] * r.col(j).to_array()[i].abs()).sum()
                });
                (v(center) - v(&e), v(center) + v(&e))
            }
            ObjectShape::Cylinder {
                radius_mm,
                height_mm,
                center,
                axis,
            } => {
                let a = v(axis).normalize().to_array();
                let e: [f64; 3] =
                    std::array::from_fn(|i| 0.5 * height_mm * a[i].abs() + radius_mm * (1.0 - a[i] * a[i]).max(0.0).sqrt());
                (v(center) - v(&e), v(center) + v(&e))
            }
            ObjectShape::Mesh { .. } => self.tri_mesh().expect("mesh variant").bounds(),
        }
    }

    /// A closed triangle mesh of the object. Primitives are meshed from
    /// their distance field on a grid of edge `cell` mm.
    pub fn to_mesh(&self, cell: f64) -> Result<TriMesh, Error> {
        self.validate()?;
        if let Some(m) = self.tri_mesh() {
            return Ok(m);
        }
        let (lo, hi) = self.bounds();
        let pad = vec3(2.0 * cell, 2.0 * cell, 2.0 * cell);
        let g = GridSpec::with_cell(lo - pad, hi + pad, cell);
        marching_cubes(pointwise(|p: &Vec3| 0.5 - self.sdf(p).expect("primitive")), &g)
    }
}

/// Interior points and the rejection sampler's acceptance ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorSamples {
    pub points: Vec<Vec3>,
    pub acceptance: f64,
}

/// Draws after which a low acceptance ratio counts as stalled.
const STALL_WINDOW: u64 = 100_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// Rejection sampling in the object's bounding box.
pub fn sample_object_interior<R: Rng + ?Sized>(o: &ObjectShape, n: usize, rng: &mut R) -> Result<InteriorSamples, Error> {
    o.validate()?;
    if n == 0 {
        return Err(Error::Config("interior sample count must be positive".into()));
    }
    let (lo, hi) = o.bounds();
    let mesh = o.tri_mesh();
    let inside = |p: &Vec3| match &mesh {
        Some(m) => m.winding_number(p) > 0.5,
        None => o.contains(p),
    };
    let mut points = Vec::with_capacity(n);
    let mut tries = 0u64;
    while points.len() < n {
        let p = uniform_in_box(&lo, &hi, rng);
        tries += 1;
        if inside(&p) {
            points.push(p);
        }
        let ratio = points.len() as f64 / tries as f64;
        if tries >= STALL_WINDOW && ratio < MIN_ACCEPTANCE {
            return Err(Error::SamplingStalled(ratio));
        }
    }
    Ok(InteriorSamples {
        acceptance: n as f64 / tries as f64,
        points,
    })
}
