//! Iso-surface extraction, triangle meshes and evaluation metrics.

mod mc;
mod mesh;
mod metrics;

pub use mc::{marching_cubes, marching_cubes_adaptive, mesh_from_values, pointwise};
pub use mesh::{write_obj, ColumnCaster, TriMesh};
pub use metrics::{chamfer_l1, iou, iou_of_labels, normal_consistency, sample_mesh_surface, MeshSamples, MIN_SAMPLES};

use serde::{Deserialize, Serialize};

use crate::geometry::{vec3, Vec3};
use crate::occupancy::HandOccupancyModel;
use crate::skeleton::Skeleton;
use crate::Error;

/// Default padding around the skeleton's joint bounds (mm). Wider than the
/// thickest capsule so hand surfaces are not clipped by the grid.
pub const DEFAULT_MARGIN: f64 = 20.0;
pub const DEFAULT_RESOLUTION: usize = 128;

/// Regular sampling grid: `resolution[a]` samples per axis spanning
/// `lo..=hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec3,
    pub hi: Vec3,
    pub resolution: [usize; 3],
    pub iso: f64,
}

impl GridSpec {
    pub fn new(lo: Vec3, hi: Vec3, resolution: usize) -> Self {
        GridSpec {
            lo,
            hi,
            resolution: [resolution; 3],
            iso: 0.5,
        }
    }

    /// Joint bounds padded by `margin` on every side.
    pub fn around_skeleton(s: &Skeleton, margin: f64, resolution: usize) -> Self {
        let (lo, hi) = s.bounds();
        let m = vec3(margin, margin, margin);
        Self::new(lo - m, hi + m, resolution)
    }

    /// Cubic cells of edge `cell` covering `lo..hi`.
    pub fn with_cell(lo: Vec3, hi: Vec3, cell: f64) -> Self {
        let n = |a: f64, b: f64| ((b - a) / cell).ceil().max(1.0) as usize + 1;
        let resolution = [n(lo.x, hi.x), n(lo.y, hi.y), n(lo.z, hi.z)];
        let hi = vec3(
            lo.x + cell * (resolution[0] - 1) as f64,
            lo.y + cell * (resolution[1] - 1) as f64,
            lo.z + cell * (resolution[2] - 1) as f64,
        );
        GridSpec {
            lo,
            hi,
            resolution,
            iso: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.resolution.iter().any(|&r| r < 2) {
            return Err(Error::Config("grid resolution must be at least 2 per axis".into()));
        }
        let d = self.hi - self.lo;
        if !(d.x > 0.0 && d.y > 0.0 && d.z > 0.0) || !self.iso.is_finite() {
            return Err(Error::Config("grid bounds must be non-empty and the iso level finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_size(&self) -> Vec3 {
        let d = self.hi - self.lo;
        let [nx, ny, nz] = self.resolution;
        vec3(d.x / (nx - 1) as f64, d.y / (ny - 1) as f64, d.z / (nz - 1) as f64)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let c = self.cell_size();
        vec3(
            self.lo.x + c.x * i as f64,
            self.lo.y + c.y * j as f64,
            self.lo.z + c.z * k as f64,
        )
    }

    pub fn point_of_index(&self, id: usize) -> Vec3 {
        let [_, ny, nz] = self.resolution;
        self.point(id / (ny * nz), id / nz % ny, id % nz)
    }

    /// All grid points in index order.
    pub fn points(&self) -> Vec<Vec3> {
        (0..self.len()).map(|id| self.point_of_index(id)).collect()
    }
}

/// The model's occupancy for a posed skeleton as a batched field.
pub fn occupancy_field<'a>(
    model: &'a HandOccupancyModel,
    s: &'a Skeleton,
) -> impl Fn(&[Vec3]) -> Result<Vec<f64>, Error> + 'a {
    move |pts: &[Vec3]| model.query(s, pts)
}

/// Reconstructs the hand surface of `s`, coarse-to-fine with stride 2.
pub fn extract_hand_mesh(model: &HandOccupancyModel, s: &Skeleton, g: &GridSpec) -> Result<TriMesh, Error> {
    marching_cubes_adaptive(occupancy_field(model, s), g, 2)
}

/// Argmax part per vertex, for coloring.
pub fn vertex_parts(model: &HandOccupancyModel, s: &Skeleton, mesh: &TriMesh) -> Result<Vec<usize>, Error> {
    Ok(model.query_with_parts(s, &mesh.vertices)?.1)
}

/// IoU between reconstructions from noisy and clean keypoints at one noise
/// amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub amplitude_mm: f64,
    pub mean_iou: f64,
    pub ious: Vec<f64>,
}

/// For each amplitude `x`, perturbs every joint coordinate by `U[-x, x]`
/// in `trials` independent draws and compares the occupancy's 0.5 level set
/// with the clean one on `points` uniform samples around the clean hand.
/// The same evaluation points are used throughout.
pub fn noise_sweep(
    model: &HandOccupancyModel,
    s: &Skeleton,
    amplitudes: &[f64],
    trials: usize,
    points: usize,
    seed: u64,
) -> Result<Vec<NoiseRow>, Error> {
    use rand::{Rng, SeedableRng};
    if trials == 0 || points == 0 || amplitudes.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::Config("noise sweep needs trials, points and non-negative amplitudes".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = GridSpec::around_skeleton(s, DEFAULT_MARGIN, 2);
    let pts: Vec<Vec3> = (0..points)
        .map(|_| crate::training::uniform_in_box(&g.lo, &g.hi, &mut rng))
        .collect();
    let labels = |occ: Vec<f64>| -> Vec<bool> { occ.into_iter().map(|o| o > 0.5).collect() };
    let clean = labels(model.query(s, &pts)?);
    let x0 = s.to_flat();
    let mut rows = Vec::with_capacity(amplitudes.len());
    for &a in amplitudes {
        let mut ious = Vec::with_capacity(trials);
        for _ in 0..trials {
            let x: Vec<f64> = x0
                .iter()
                .map(|v| if a > 0.0 { v + rng.random_range(-a..=a) } else { *v })
                .collect();
            let noisy = Skeleton::from_flat(&x, crate::skeleton::Handedness::Right)?;
            ious.push(iou_of_labels(&labels(model.query(&noisy, &pts)?), &clean));
        }
        rows.push(NoiseRow {
            amplitude_mm: a,
            mean_iou: ious.iter().sum::<f64>() / trials as f64,
            ious,
        });
    }
    Ok(rows)
}

/// A distinct color per part.
pub fn part_color(part: usize) -> [f64; 3] {
    let h = (part as f64 * 0.618_033_988_75).fract();
    let x = |o: f64| {
        let t = ((h + o) * 6.0).rem_euclid(6.0);
        let v = (t - 3.0).abs() - 1.0;
        v.clamp(0.0, 1.0) * 0.75 + 0.2
    };
    [x(0.0), x(2.0 / 3.0), x(1.0 / 3.0)]
}
