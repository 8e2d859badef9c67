//! Multi-pose, multi-shape capsule corpora and their directory format.
//!
//! A corpus directory holds `manifest.json` and one sub-directory per
//! sample with `skeleton.json`, `uniform.hlpt` and `surface.hlpt`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonicalization::{pose_from_angles, AngleRanges};
use crate::skeleton::{read_skeleton_json, write_skeleton_json, BoneLengths, Skeleton, NUM_FINGERS};
use crate::{par, Error};

use super::capsule::CapsuleHand;
use super::sampling::{read_points, sample_query_points, write_points, LabeledPointSet, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub poses: usize,
    pub shapes: usize,
    /// Per-finger length scale is drawn from `1 ± shape_variation`.
    pub shape_variation: f64,
    pub ranges: AngleRanges,
    pub uniform_points: usize,
    pub surface_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            poses: 100,
            shapes: 5,
            shape_variation: 0.2,
            ranges: AngleRanges::default(),
            uniform_points: 10_000,
            surface_points: 10_000,
            noise_sigma: 3.0,
            seed: 0,
        }
    }
}

/// Every pose combined with every shape, pose-major. Poses and shapes are
/// drawn from independent streams of `spec.seed`.
pub fn generate_hands(spec: &CorpusSpec) -> Result<Vec<CapsuleHand>, Error> {
    if spec.poses == 0 || spec.shapes == 0 {
        return Err(Error::Config("corpus needs at least one pose and one shape".into()));
    }
    if !(0.0..1.0).contains(&spec.shape_variation) {
        return Err(Error::Config("shape variation must be in [0, 1)".into()));
    }
    let mut pose_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    pose_rng.set_stream(1);
    let mut shape_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shape_rng.set_stream(2);
    let angles: Vec<_> = (0..spec.poses).map(|_| spec.ranges.sample(&mut pose_rng)).collect();
    let v = spec.shape_variation;
    let shapes: Vec<BoneLengths> = (0..spec.shapes)
        .map(|_| {
            let scale: [f64; NUM_FINGERS] = std::array::from_fn(|_| 1.0 + v * (2.0 * shape_rng.random::<f64>() - 1.0));
            BoneLengths::reference().scaled_per_finger(&scale)
        })
        .collect();
    let mut out = Vec::with_capacity(spec.poses * spec.shapes);
    for a in &angles {
        for l in &shapes {
            out.push(CapsuleHand::with_default_radii(pose_from_angles(l, a)?));
        }
    }
    Ok(out)
}

/// Poses held out for validation: the last tenth, at least one. Every
/// shape of a held-out pose is held out with it.
pub fn held_out_poses(spec: &CorpusSpec) -> usize {
    (spec.poses / 10).max(1)
}

/// Index of the first held-out sample in pose-major order; samples before
/// it are for training.
pub fn split_index(spec: &CorpusSpec) -> usize {
    spec.poses.saturating_sub(held_out_poses(spec)) * spec.shapes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: CorpusSpec,
    pub samples: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CorpusSample {
    pub name: String,
    pub hand: CapsuleHand,
    pub uniform: LabeledPointSet,
    pub surface: LabeledPointSet,
}

fn sample_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (i as u64).wrapping_add(0x632b_e59b_d9b4_e019)
}

/// Generates the corpus in memory, labeled points already quantized to the
/// file precision.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusSample>, Error> {
    let hands = generate_hands(spec)?;
    let samples = par::map_range(hands.len(), |i| {
        let hand = &hands[i];
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, i));
        let uniform = sample_query_points(hand, spec.uniform_points, Strategy::UniformBox, &mut rng).quantized(hand);
        let surface = sample_query_points(
            hand,
            spec.surface_points,
            Strategy::Surface {
                sigma: spec.noise_sigma,
            },
            &mut rng,
        )
        .quantized(hand);
        CorpusSample {
            name: format!("{i:05}"),
            hand: hand.clone(),
            uniform,
            surface,
        }
    });
    Ok(samples)
}

pub fn write_corpus(dir: &Path, spec: &CorpusSpec, samples: &[CorpusSample]) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        let d = dir.join(&s.name);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        write_skeleton_json(&d.join("skeleton.json"), &s.hand.skeleton)?;
        write_points(&s.uniform, &d.join("uniform.hlpt"))?;
        write_points(&s.surface, &d.join("surface.hlpt"))?;
    }
    let manifest = Manifest {
        spec: spec.clone(),
        samples: samples.iter().map(|s| s.name.clone()).collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, Error> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))
}

/// Reads every sample listed in the manifest. Capsule radii are rebuilt
/// from the skeleton's bone lengths.
pub fn read_corpus(dir: &Path) -> Result<(Manifest, Vec<CorpusSample>), Error> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::with_capacity(manifest.samples.len());
    for name in &manifest.samples {
        let d: PathBuf = dir.join(name);
        let skeleton: Skeleton = read_skeleton_json(&d.join("skeleton.json"))?;
        out.push(CorpusSample {
            name: name.clone(),
            hand: CapsuleHand::with_default_radii(skeleton),
            uniform: read_points(&d.join("uniform.hlpt"))?,
            surface: read_points(&d.join("surface.hlpt"))?,
        });
    }
    Ok((manifest, out))
}
