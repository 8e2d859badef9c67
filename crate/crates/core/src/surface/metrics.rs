//! IoU on uniform points and sample-based mesh distances.
//!
//! Chamfer-L1: both meshes are sampled area-uniformly (`n` points each,
//! seeded); accuracy is the mean Euclidean distance from samples of `a` to
//! their nearest sample of `b`, completeness the reverse, and the result is
//! their average. Normal consistency pairs the same nearest neighbors and
//! averages `|n_a · n_b|` over both directions.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Vec3;
use crate::{par, Error};

use super::TriMesh;

/// `|A ∩ B| / |A ∪ B|`; 1 when both are empty.
pub fn iou_of_labels(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU of the 0.5 super-level sets of two fields on shared points.
pub fn iou<A, B>(pred: A, gt: B, points: &[Vec3]) -> Result<f64, Error>
where
    A: Fn(&[Vec3]) -> Result<Vec<f64>, Error>,
    B: Fn(&[Vec3]) -> Result<Vec<f64>, Error>,
{
    let label = |v: Vec<f64>| -> Result<Vec<bool>, Error> {
        if v.len() != points.len() {
            return Err(Error::ShapeMismatch {
                expected: points.len(),
                got: v.len(),
            });
        }
        Ok(v.into_iter().map(|x| x > 0.5).collect())
    };
    Ok(iou_of_labels(&label(pred(points)?)?, &label(gt(points)?)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSamples {
    pub points: Vec<Vec3>,
    /// Face normal at each sample.
    pub normals: Vec<Vec3>,
}

/// Area-uniform surface samples.
pub fn sample_mesh_surface<R: Rng + ?Sized>(mesh: &TriMesh, n: usize, rng: &mut R) -> Result<MeshSamples, Error> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * acc;
        let t = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let [a, b, c] = mesh.corners(t);
        let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        points.push(a + (b - a) * r1 + (c - a) * r2);
        normals.push(mesh.face_normal(t));
    }
    Ok(MeshSamples { points, normals })
}

fn samples(mesh: &TriMesh, n: usize, seed: u64) -> Result<MeshSamples, Error> {
    sample_mesh_surface(mesh, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Nearest sample of `to` for each sample of `from`: (distance, index).
fn nearest(from: &[Vec3], to: &[Vec3]) -> Vec<(f64, usize)> {
    let pts: Vec<[f64; 3]> = to.iter().map(Vec3::to_array).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&pts);
    par::map_slice(from, |p| {
        let nn = tree.nearest_one::<SquaredEuclidean>(&p.to_array());
        (nn.distance.sqrt(), nn.item as usize)
    })
}

/// Fewest samples per mesh accepted by the distance metrics.
pub const MIN_SAMPLES: usize = 1000;

fn check_n(n: usize) -> Result<(), Error> {
    if n < MIN_SAMPLES {
        Err(Error::Config(format!("at least {MIN_SAMPLES} samples per mesh are required")))
    } else {
        Ok(())
    }
}

/// Symmetric Chamfer-L1 distance (mm) from `n` seeded samples per mesh.
pub fn chamfer_l1(a: &TriMesh, b: &TriMesh, n: usize, seed: u64) -> Result<f64, Error> {
    check_n(n)?;
    let sa = samples(a, n, seed)?;
    let sb = samples(b, n, seed)?;
    let mean = |v: Vec<(f64, usize)>| v.iter().map(|x| x.0).sum::<f64>() / v.len() as f64;
    let accuracy = mean(nearest(&sa.points, &sb.points));
    let completeness = mean(nearest(&sb.points, &sa.points));
    Ok(0.5 * (accuracy + completeness))
}

/// Symmetric normal consistency in [0, 1] from `n` seeded samples per mesh.
pub fn normal_consistency(a: &TriMesh, b: &TriMesh, n: usize, seed: u64) -> Result<f64, Error> {
    check_n(n)?;
    let sa = samples(a, n, seed)?;
    let sb = samples(b, n, seed)?;
    let one_way = |x: &MeshSamples, y: &MeshSamples| {
        let nn = nearest(&x.points, &y.points);
        nn.iter()
            .zip(&x.normals)
            .map(|(&(_, j), nx)| nx.dot(&y.normals[j]).abs())
            .sum::<f64>()
            / nn.len() as f64
    };
    Ok(0.5 * (one_way(&sa, &sb) + one_way(&sb, &sa)))
}
