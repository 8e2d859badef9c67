//! Labeled query points and their binary file format.
//!
//! File layout (`.hlpt`): `b"HLPT"`, version (u32 LE), strategy tag (u8,
//! 0 uniform / 1 surface), noise sigma (f32 LE), point count (u64 LE), then
//! per point three `f32` coordinates and one `u8` label.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{vec3, Vec3};
use crate::Error;

use super::capsule::CapsuleHand;

const MAGIC: &[u8; 4] = b"HLPT";
const VERSION: u32 = 1;
/// Padding of the sampling box around the capsules (mm).
pub const BOX_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    /// Uniform in the padded bounding box.
    UniformBox,
    /// On the surface plus isotropic Gaussian noise of `sigma` mm.
    Surface { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointSet {
    pub points: Vec<Vec3>,
    pub labels: Vec<u8>,
    pub strategy: Strategy,
}

impl LabeledPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn inside_fraction(&self) -> f64 {
        self.labels.iter().map(|&l| l as f64).sum::<f64>() / self.len().max(1) as f64
    }

    /// Points rounded to `f32` and relabeled, so the set survives a round
    /// trip through the file format with labels still exact.
    pub fn quantized(&self, hand: &CapsuleHand) -> Self {
        let points: Vec<Vec3> = self
            .points
            .iter()
            .map(|p| vec3(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64))
            .collect();
        let labels = points.iter().map(|p| hand.inside(p) as u8).collect();
        LabeledPointSet {
            points,
            labels,
            strategy: self.strategy,
        }
    }
}

/// The padded box uniform samples are drawn from.
pub fn sampling_box(hand: &CapsuleHand) -> (Vec3, Vec3) {
    let (lo, hi) = hand.bounds();
    let m = vec3(BOX_MARGIN, BOX_MARGIN, BOX_MARGIN);
    (lo - m, hi + m)
}

pub fn uniform_in_box<R: Rng + ?Sized>(lo: &Vec3, hi: &Vec3, rng: &mut R) -> Vec3 {
    vec3(
        lo.x + (hi.x - lo.x) * rng.random::<f64>(),
        lo.y + (hi.y - lo.y) * rng.random::<f64>(),
        lo.z + (hi.z - lo.z) * rng.random::<f64>(),
    )
}

/// Draws `n` points by `strategy`, labeled by the exact inside test.
pub fn sample_query_points<R: Rng + ?Sized>(
    hand: &CapsuleHand,
    n: usize,
    strategy: Strategy,
    rng: &mut R,
) -> LabeledPointSet {
    let points: Vec<Vec3> = match strategy {
        Strategy::UniformBox => {
            let (lo, hi) = sampling_box(hand);
            (0..n).map(|_| uniform_in_box(&lo, &hi, rng)).collect()
        }
        Strategy::Surface { sigma } => {
            let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
            (0..n)
                .map(|_| {
                    let p = hand.sample_surface(rng);
                    if sigma > 0.0 {
                        p + vec3(normal.sample(rng), normal.sample(rng), normal.sample(rng))
                    } else {
                        p
                    }
                })
                .collect()
        }
    };
    let labels = points.iter().map(|p| hand.inside(p) as u8).collect();
    LabeledPointSet {
        points,
        labels,
        strategy,
    }
}

pub fn write_points(set: &LabeledPointSet, path: &Path) -> Result<(), Error> {
    let mut out = Vec::with_capacity(21 + 13 * set.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (tag, sigma) = match set.strategy {
        Strategy::UniformBox => (0u8, 0.0),
        Strategy::Surface { sigma } => (1u8, sigma),
    };
    out.push(tag);
    out.extend_from_slice(&(sigma as f32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for (p, &l) in set.points.iter().zip(&set.labels) {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.push(l);
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_points(path: &Path) -> Result<LabeledPointSet, Error> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::parse(path, m);
    if bytes.len() < 21 || &bytes[..4] != MAGIC {
        return Err(bad("not a labeled point file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let sigma = f32::from_le_bytes(bytes[9..13].try_into().unwrap()) as f64;
    let strategy = match bytes[8] {
        0 => Strategy::UniformBox,
        1 => Strategy::Surface { sigma },
        t => return Err(bad(&format!("unknown strategy tag {t}"))),
    };
    let n = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let body = &bytes[21..];
    if body.len() != 13 * n {
        return Err(bad("point count does not match file size"));
    }
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for rec in body.chunks_exact(13) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        points.push(vec3(f(0), f(1), f(2)));
        if rec[12] > 1 {
            return Err(bad("label must be 0 or 1"));
        }
        labels.push(rec[12]);
    }
    Ok(LabeledPointSet {
        points,
        labels,
        strategy,
    })
}
