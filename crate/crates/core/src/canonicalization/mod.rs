//! Closed-form canonicalization of a hand skeleton.
//!
//! For every bone this computes a rigid transform `B⁻¹` that carries the
//! posed bone onto the same bone in a fixed canonical pose. The pipeline is
//!
//! 1. bone vectors from keypoints;
//! 2. a global alignment (middle palmar bone to +y, index–middle palm normal
//!    to −z) followed by palm normalization, which rotates palmar bones so
//!    the spreads and plane folds take their canonical values;
//! 3. per-finger local frames: level-1 frames are built from the normalized
//!    palm, deeper frames by rotating the parent frame by the parent's own
//!    flexion/abduction, so `z` always follows the parent bone;
//! 4. per bone, the rotation that replaces the measured angles by the
//!    canonical ones, composed down the chain;
//! 5. translations that re-attach each canonical bone to the tip of its
//!    canonical parent (bone lengths are kept).
//!
//! All of it is written against [`Scalar`], so the same code differentiates
//! on a [`Tape`](crate::diffcore::Tape).

mod frames;
mod palm;

pub use frames::{extract_flexion_abduction, LocalFrame};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Scalar;
use crate::geometry::{Mat3, Rigid, Vec3};
use crate::skeleton::{
    bone_vectors_of, tree, BoneLengths, BoneVectors, Handedness, Skeleton, NUM_BONES,
    NUM_FINGERS, NUM_JOINTS,
};

use frames::{angle_rotation, level1_frames, local_angles};
use palm::{
    angle_between, check_palm, folds, normalize_palm_generic, palm_alignment, palm_from_angles,
    palm_normals, spreads,
};

pub(crate) const COLLINEAR_EPS: f64 = 1e-8;
pub(crate) const DEGENERATE_EPS: f64 = 1e-8;
/// Non-palmar bones carrying flexion/abduction.
pub const NUM_ANGLE_BONES: usize = NUM_BONES - NUM_FINGERS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanonError {
    #[error("palmar bones {pair} and {} are collinear", pair + 1)]
    CollinearPalmarBones { pair: usize },
    #[error("degenerate local frame for bone {bone}")]
    DegenerateFrame { bone: usize },
    #[error("{family}[{index}] = {value} is outside its range")]
    AngleOutOfRange {
        family: &'static str,
        index: usize,
        value: f64,
    },
}

/// Reference pose. Flexion/abduction are per non-palmar bone (bone 5 + k),
/// measured in the frames built from the canonical palm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPose {
    pub folds: [f64; 3],
    pub spreads: [f64; 4],
    pub flexion: [f64; NUM_ANGLE_BONES],
    pub abduction: [f64; NUM_ANGLE_BONES],
}

impl Default for CanonicalPose {
    /// Flat hand: straight fingers on a cupped palm.
    fn default() -> Self {
        CanonicalPose {
            folds: [0.8, 0.2, 0.2],
            spreads: [0.4, 0.2, 0.2, 0.2],
            flexion: [0.0; NUM_ANGLE_BONES],
            abduction: [0.0; NUM_ANGLE_BONES],
        }
    }
}

impl CanonicalPose {
    pub fn angles(&self) -> AngleSet {
        AngleSet {
            flexion: self.flexion,
            abduction: self.abduction,
            spread: self.spreads,
            plane: self.folds,
        }
    }

    /// Palm directions in the aligned frame.
    pub fn palm(&self) -> [Vec3; 5] {
        palm_from_angles(&self.spreads, &self.folds)
    }
}

/// Biomechanical angles of a hand. `plane` holds signed folds between
/// adjacent palm planes (positive cups the palm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSet<T = f64> {
    pub flexion: [T; NUM_ANGLE_BONES],
    pub abduction: [T; NUM_ANGLE_BONES],
    pub spread: [T; 4],
    pub plane: [T; 3],
}

impl<T: Scalar> AngleSet<T> {
    pub fn val(&self) -> AngleSet {
        AngleSet {
            flexion: self.flexion.map(|v| v.val()),
            abduction: self.abduction.map(|v| v.val()),
            spread: self.spread.map(|v| v.val()),
            plane: self.plane.map(|v| v.val()),
        }
    }
}

impl AngleSet {
    pub fn to_vec(&self) -> Vec<f64> {
        self.flexion
            .iter()
            .chain(&self.abduction)
            .chain(&self.spread)
            .chain(&self.plane)
            .copied()
            .collect()
    }

    pub fn max_abs_diff(&self, o: &AngleSet) -> f64 {
        self.to_vec()
            .iter()
            .zip(o.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Closed ranges used when synthesizing poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleRanges {
    /// Per level 1..3.
    pub flexion: [(f64, f64); 3],
    pub abduction: [(f64, f64); 3],
    pub spread: [(f64, f64); 4],
    pub plane: [(f64, f64); 3],
}

impl Default for AngleRanges {
    fn default() -> Self {
        AngleRanges {
            flexion: [(-0.4, 1.5), (0.0, 1.7), (0.0, 1.3)],
            abduction: [(-0.4, 0.4), (-0.1, 0.1), (-0.1, 0.1)],
            spread: [(0.2, 1.2), (0.05, 0.45), (0.05, 0.45), (0.05, 0.45)],
            plane: [(0.0, 1.4), (-0.1, 0.5), (-0.1, 0.5)],
        }
    }
}

impl AngleRanges {
    fn level_of(k: usize) -> usize {
        tree::level(k + NUM_FINGERS) - 1
    }

    pub fn check(&self, a: &AngleSet) -> Result<(), CanonError> {
        let within = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        let err = |family, index, value| Err(CanonError::AngleOutOfRange { family, index, value });
        for k in 0..NUM_ANGLE_BONES {
            if !within(a.flexion[k], self.flexion[Self::level_of(k)]) {
                return err("flexion", k, a.flexion[k]);
            }
            if !within(a.abduction[k], self.abduction[Self::level_of(k)]) {
                return err("abduction", k, a.abduction[k]);
            }
        }
        for k in 0..4 {
            if !within(a.spread[k], self.spread[k]) {
                return err("spread", k, a.spread[k]);
            }
        }
        for k in 0..3 {
            if !within(a.plane[k], self.plane[k]) {
                return err("plane", k, a.plane[k]);
            }
        }
        Ok(())
    }

    /// Uniform sample from the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AngleSet {
        let mut u = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        let flexion = std::array::from_fn(|k| u(self.flexion[Self::level_of(k)]));
        let abduction = std::array::from_fn(|k| u(self.abduction[Self::level_of(k)]));
        let spread = std::array::from_fn(|k| u(self.spread[k]));
        let plane = std::array::from_fn(|k| u(self.plane[k]));
        AngleSet {
            flexion,
            abduction,
            spread,
            plane,
        }
    }

    /// Ranges shrunk towards their midpoints by `factor` in (0, 1].
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |(lo, hi): (f64, f64)| {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo) * factor;
            (mid - half, mid + half)
        };
        AngleRanges {
            flexion: self.flexion.map(s),
            abduction: self.abduction.map(s),
            spread: self.spread.map(s),
            plane: self.plane.map(s),
        }
    }
}

/// Palm normals and angles measured on a posed palm.
#[derive(Debug, Clone, PartialEq)]
pub struct PalmFrame {
    pub normals: [Vec3; 4],
    /// Unsigned angles between adjacent palm normals, in [0, π).
    pub plane_pair_angles: [f64; 3],
    /// Signed folds (see [`AngleSet::plane`]).
    pub folds: [f64; 3],
    pub spread_angles: [f64; 4],
}

fn palm_of<T: Copy>(dirs: &[Vec3<T>; NUM_BONES]) -> [Vec3<T>; 5] {
    std::array::from_fn(|k| dirs[k])
}

pub fn palm_frame(b: &BoneVectors) -> Result<PalmFrame, CanonError> {
    let palm = palm_of(&b.directions);
    check_palm(&palm)?;
    let normals = palm_normals(&palm);
    Ok(PalmFrame {
        normals,
        plane_pair_angles: std::array::from_fn(|i| angle_between(&normals[i], &normals[i + 1])),
        folds: folds(&palm),
        spread_angles: spreads(&palm),
    })
}

/// Rotations of the palm normalization, one per palmar bone.
#[derive(Debug, Clone, PartialEq)]
pub struct PalmNormalization {
    pub rotations: [Mat3; 5],
}

/// Normalizes the palm in the skeleton's own frame. Returns the rotations
/// and the bone vectors with every bone rotated by the rotation of its finger.
pub fn normalize_palm(b: &BoneVectors) -> Result<(PalmNormalization, BoneVectors), CanonError> {
    normalize_palm_with(b, &CanonicalPose::default())
}

pub fn normalize_palm_with(
    b: &BoneVectors,
    canon: &CanonicalPose,
) -> Result<(PalmNormalization, BoneVectors), CanonError> {
    let palm = palm_of(&b.directions);
    check_palm(&palm)?;
    let rotations = normalize_palm_generic(&palm, canon);
    let directions =
        std::array::from_fn(|i| rotations[tree::finger_index(i)].mul_vec(&b.directions[i]));
    Ok((
        PalmNormalization { rotations },
        BoneVectors {
            directions,
            lengths: b.lengths,
        },
    ))
}

/// Frames for bones 5..20 (index `i - 5`) of a palm-normalized hand. Each
/// frame's z is the parent bone direction.
pub fn build_local_frames(b_normalized: &BoneVectors) -> Result<[LocalFrame; NUM_ANGLE_BONES], CanonError> {
    let palm = palm_of(&b_normalized.directions);
    check_palm(&palm)?;
    let level1 = level1_frames(&palm, &palm_normals(&palm))?;
    let mut out = [LocalFrame::from_matrix(&Mat3::identity()); NUM_ANGLE_BONES];
    for f in 0..NUM_FINGERS {
        let mut w = level1[f];
        for level in 1..4 {
            let i = tree::bone(f, level);
            out[i - NUM_FINGERS] = LocalFrame::from_matrix(&w);
            let (fl, ab) = local_angles(&w.transpose().mul_vec(&b_normalized.directions[i]));
            w = w.mul_mat(&angle_rotation(fl, ab));
        }
    }
    Ok(out)
}

/// Everything the canonicalization produces for one skeleton.
#[derive(Debug, Clone)]
pub struct Canonicalized<T = f64> {
    /// Posed → canonical, per bone.
    pub inv: [Rigid<T>; NUM_BONES],
    /// Posed → canonical for the palm as a whole: the global alignment.
    pub palm: Rigid<T>,
    pub canonical_joints: [Vec3<T>; NUM_JOINTS],
    pub lengths: [T; NUM_BONES],
    pub angles: AngleSet<T>,
}

/// The full canonicalization, generic over the scalar type.
pub fn canonicalize_generic<T: Scalar>(
    joints: &[Vec3<T>; NUM_JOINTS],
    canon: &CanonicalPose,
) -> Result<Canonicalized<T>, CanonError> {
    let (dirs, lengths) = bone_vectors_of(joints);
    let palm = palm_of(&dirs);
    check_palm(&palm)?;
    let spread = spreads(&palm);
    let plane = folds(&palm);

    let g0 = palm_alignment(&palm);
    let aligned = palm.map(|b| g0.mul_vec(&b));
    let p = normalize_palm_generic(&aligned, canon);

    let canon_palm = canon.palm();
    let frames = level1_frames(&canon_palm, &palm_normals(&canon_palm))?;

    let zero = T::cst(0.0);
    let mut rot = [Mat3::<T>::identity(); NUM_BONES];
    let mut cdir = [Vec3::<T>::zero(); NUM_BONES];
    let mut flexion = [zero; NUM_ANGLE_BONES];
    let mut abduction = [zero; NUM_ANGLE_BONES];
    for f in 0..NUM_FINGERS {
        let pf = p[f].mul_mat(&g0);
        rot[f] = pf;
        cdir[f] = Vec3::cst(canon_palm[f]);
        let mut w = Mat3::<T>::cst(&frames[f]);
        let mut wc = w;
        for level in 1..4 {
            let i = tree::bone(f, level);
            let k = i - NUM_FINGERS;
            let local = w.transpose().mul_vec(&pf.mul_vec(&dirs[i]));
            let (fl, ab) = local_angles(&local);
            flexion[k] = fl;
            abduction[k] = ab;
            let wi = w.mul_mat(&angle_rotation(fl, ab));
            let wci = wc.mul_mat(&angle_rotation(
                T::cst(canon.flexion[k]),
                T::cst(canon.abduction[k]),
            ));
            rot[i] = wci.mul_mat(&wi.transpose()).mul_mat(&pf);
            cdir[i] = wci.col(2);
            w = wi;
            wc = wci;
        }
    }

    let mut c = [Vec3::<T>::zero(); NUM_JOINTS];
    for level in 0..4 {
        for f in 0..NUM_FINGERS {
            let i = tree::bone(f, level);
            c[tree::child_joint(i)] = c[tree::parent_joint(i)] + cdir[i].scale(lengths[i]);
        }
    }
    let inv = std::array::from_fn(|i| {
        let jp = tree::parent_joint(i);
        Rigid {
            rot: rot[i],
            trans: c[jp] - rot[i].mul_vec(&joints[jp]),
        }
    });
    Ok(Canonicalized {
        inv,
        palm: Rigid {
            rot: g0,
            trans: -g0.mul_vec(&joints[0]),
        },
        canonical_joints: c,
        lengths,
        angles: AngleSet {
            flexion,
            abduction,
            spread,
            plane,
        },
    })
}

pub fn canonicalize(s: &Skeleton) -> Result<Canonicalized, CanonError> {
    canonicalize_generic(s.joints(), &CanonicalPose::default())
}

/// Per-bone transforms: `inv` maps posed → canonical, `fwd` canonical → posed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTransformSet {
    pub inv: [Rigid; NUM_BONES],
    pub fwd: [Rigid; NUM_BONES],
}

impl BoneTransformSet {
    pub fn from_inv(inv: [Rigid; NUM_BONES]) -> Self {
        BoneTransformSet {
            fwd: inv.map(|t| t.inverse()),
            inv,
        }
    }

    pub fn inv_homogeneous(&self) -> Vec<[[f64; 4]; 4]> {
        self.inv.iter().map(|t| t.to_homogeneous()).collect()
    }

    pub fn fwd_homogeneous(&self) -> Vec<[[f64; 4]; 4]> {
        self.fwd.iter().map(|t| t.to_homogeneous()).collect()
    }
}

pub fn canonicalization_transforms(s: &Skeleton) -> Result<(BoneTransformSet, AngleSet), CanonError> {
    let c = canonicalize(s)?;
    Ok((BoneTransformSet::from_inv(c.inv), c.angles))
}

pub fn canonical_angles_of(s: &Skeleton) -> Result<AngleSet, CanonError> {
    Ok(canonicalize(s)?.angles)
}

/// Forward kinematics: a right hand with root at the origin, middle palmar
/// bone along +y and palm facing +z, realizing `a` under the default
/// canonical pose. Angles must lie within [`AngleRanges::default`].
pub fn pose_from_angles(lengths: &BoneLengths, a: &AngleSet) -> Result<Skeleton, crate::Error> {
    AngleRanges::default().check(a)?;
    pose_from_angles_unchecked(lengths, a, &CanonicalPose::default())
}

/// [`pose_from_angles`] without the range check, for an explicit canonical pose.
pub fn pose_from_angles_unchecked(
    lengths: &BoneLengths,
    a: &AngleSet,
    canon: &CanonicalPose,
) -> Result<Skeleton, crate::Error> {
    let palm = palm_from_angles(&a.spread, &a.plane);
    check_palm(&palm)?;
    let p = normalize_palm_generic(&palm, canon);
    let canon_palm = canon.palm();
    let frames = level1_frames(&canon_palm, &palm_normals(&canon_palm))?;

    let mut dirs = [Vec3::zero(); NUM_BONES];
    dirs[..NUM_FINGERS].copy_from_slice(&palm);
    for f in 0..NUM_FINGERS {
        let back = p[f].transpose();
        let mut w = frames[f];
        for level in 1..4 {
            let i = tree::bone(f, level);
            let k = i - NUM_FINGERS;
            w = w.mul_mat(&angle_rotation(a.flexion[k], a.abduction[k]));
            dirs[i] = back.mul_vec(&w.col(2));
        }
    }
    let joints = crate::skeleton::joints_from_bones(
        Vec3::zero(),
        &BoneVectors {
            directions: dirs,
            lengths: lengths.0,
        },
    );
    Ok(Skeleton::from_right_joints(joints, Handedness::Right)?)
}

/// The canonical skeleton for given bone lengths.
pub fn canonical_skeleton(lengths: &BoneLengths) -> Skeleton {
    let canon = CanonicalPose::default();
    pose_from_angles_unchecked(lengths, &canon.angles(), &canon)
        .expect("canonical pose is valid for positive lengths")
}
