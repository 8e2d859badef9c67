//! Hand skeleton data model and the keypoint → bone-vector map.
//!
//! Joint layout: index 0 is the wrist; each finger then contributes four
//! joints ordered base → tip, fingers ordered thumb, index, middle, ring,
//! pinky. Bones are numbered 0..20 (zero-based): bone `5 * level + finger`
//! ends at joint `1 + 4 * finger + level`. Bones 0..5 are the palmar
//! (level-0) bones hanging off the wrist.

mod io;

pub use io::{read_skeleton, read_skeleton_csv, read_skeleton_json, write_skeleton_json, SkeletonFile};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Scalar;
use crate::geometry::{Rigid, Vec3};

pub const NUM_JOINTS: usize = 21;
pub const NUM_BONES: usize = 20;
pub const NUM_FINGERS: usize = 5;
/// Bones shorter than this are treated as coincident joints.
pub const MIN_BONE_LENGTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finger {
    Thumb = 0,
    Index = 1,
    Middle = 2,
    Ring = 3,
    Pinky = 4,
}

impl Finger {
    pub const ALL: [Finger; 5] = [
        Finger::Thumb,
        Finger::Index,
        Finger::Middle,
        Finger::Ring,
        Finger::Pinky,
    ];
}

/// The static kinematic tree shared by every skeleton.
pub mod tree {
    use super::{Finger, NUM_FINGERS};

    pub const fn level(bone: usize) -> usize {
        bone / NUM_FINGERS
    }

    pub const fn finger_index(bone: usize) -> usize {
        bone % NUM_FINGERS
    }

    pub fn finger(bone: usize) -> Finger {
        Finger::ALL[finger_index(bone)]
    }

    pub const fn bone(finger: usize, level: usize) -> usize {
        level * NUM_FINGERS + finger
    }

    /// Parent bone, `None` for the palmar (root) bones.
    pub const fn parent(bone: usize) -> Option<usize> {
        if bone < NUM_FINGERS {
            None
        } else {
            Some(bone - NUM_FINGERS)
        }
    }

    /// Joint at the distal end of `bone`.
    pub const fn child_joint(bone: usize) -> usize {
        1 + 4 * finger_index(bone) + level(bone)
    }

    /// Joint at the proximal end of `bone`.
    pub const fn parent_joint(bone: usize) -> usize {
        if bone < NUM_FINGERS {
            0
        } else {
            child_joint(bone - NUM_FINGERS)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("expected 21 joints, got {0}")]
    WrongJointCount(usize),
    #[error("joint {0} has a non-finite coordinate")]
    NonFiniteCoordinate(usize),
    #[error("bone {bone} has length {length:e} mm")]
    DegenerateBone { bone: usize, length: f64 },
}

/// A validated hand skeleton in millimeters, stored in right-hand convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: [Vec3; NUM_JOINTS],
    handedness: Handedness,
}

impl Skeleton {
    /// Validates raw joint positions. Left hands are mirrored into right-hand
    /// convention by negating x.
    pub fn new(raw: &[[f64; 3]], handedness: Handedness) -> Result<Self, SkeletonError> {
        if raw.len() != NUM_JOINTS {
            return Err(SkeletonError::WrongJointCount(raw.len()));
        }
        let mut joints = [Vec3::zero(); NUM_JOINTS];
        for (i, p) in raw.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(SkeletonError::NonFiniteCoordinate(i));
            }
            let x = if handedness == Handedness::Left { -p[0] } else { p[0] };
            joints[i] = Vec3::new(x, p[1], p[2]);
        }
        Self::from_right_joints(joints, handedness)
    }

    /// Builds a skeleton from joints already in right-hand convention.
    pub fn from_right_joints(
        joints: [Vec3; NUM_JOINTS],
        handedness: Handedness,
    ) -> Result<Self, SkeletonError> {
        for (i, p) in joints.iter().enumerate() {
            if !p.is_finite() {
                return Err(SkeletonError::NonFiniteCoordinate(i));
            }
        }
        for bone in 0..NUM_BONES {
            let length = joints[tree::child_joint(bone)].dist(&joints[tree::parent_joint(bone)]);
            if length.is_nan() || length <= MIN_BONE_LENGTH {
                return Err(SkeletonError::DegenerateBone { bone, length });
            }
        }
        Ok(Skeleton { joints, handedness })
    }

    pub fn joints(&self) -> &[Vec3; NUM_JOINTS] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> Vec3 {
        self.joints[i]
    }

    pub fn root(&self) -> Vec3 {
        self.joints[0]
    }

    pub fn handedness(&self) -> Handedness {
        self.handedness
    }

    /// Joints in the caller's original frame (left hands un-mirrored).
    pub fn original_joints(&self) -> Vec<[f64; 3]> {
        self.joints
            .iter()
            .map(|p| {
                let x = if self.handedness == Handedness::Left { -p.x } else { p.x };
                [x, p.y, p.z]
            })
            .collect()
    }

    /// Flat 63-vector `[x0, y0, z0, x1, ...]` in right-hand convention.
    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64], handedness: Handedness) -> Result<Self, SkeletonError> {
        if flat.len() != 3 * NUM_JOINTS {
            return Err(SkeletonError::WrongJointCount(flat.len() / 3));
        }
        let mut joints = [Vec3::zero(); NUM_JOINTS];
        for (i, j) in joints.iter_mut().enumerate() {
            *j = Vec3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
        }
        Self::from_right_joints(joints, handedness)
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Skeleton {
            joints: self.joints.map(|p| p + t),
            handedness: self.handedness,
        }
    }

    pub fn transformed(&self, g: &Rigid) -> Self {
        Skeleton {
            joints: self.joints.map(|p| g.apply(&p)),
            handedness: self.handedness,
        }
    }

    /// Uniform scale about the root.
    pub fn scaled(&self, s: f64) -> Self {
        let r = self.root();
        Skeleton {
            joints: self.joints.map(|p| r + (p - r) * s),
            handedness: self.handedness,
        }
    }

    pub fn bone_vectors(&self) -> BoneVectors {
        let (directions, lengths) = bone_vectors_of(&self.joints);
        BoneVectors { directions, lengths }
    }

    pub fn bone_lengths(&self) -> BoneLengths {
        BoneLengths(bone_lengths_of(&self.joints))
    }

    /// Axis-aligned bounding box of the joints.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = self.joints[0];
        let mut hi = self.joints[0];
        for p in &self.joints[1..] {
            lo = lo.min_elem(p);
            hi = hi.max_elem(p);
        }
        (lo, hi)
    }
}

/// Unit bone directions and lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneVectors {
    pub directions: [Vec3; NUM_BONES],
    pub lengths: [f64; NUM_BONES],
}

/// Per-bone lengths in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneLengths(pub [f64; NUM_BONES]);

impl BoneLengths {
    /// Adult reference hand, by level then finger.
    pub fn reference() -> Self {
        BoneLengths([
            35.0, 80.0, 78.0, 74.0, 70.0, //
            35.0, 42.0, 46.0, 43.0, 35.0, //
            30.0, 25.0, 28.0, 27.0, 20.0, //
            27.0, 22.0, 24.0, 23.0, 21.0,
        ])
    }

    /// Lengths with every bone of finger `f` (palmar bone included) scaled
    /// by `scale[f]`.
    pub fn scaled_per_finger(&self, scale: &[f64; NUM_FINGERS]) -> Self {
        BoneLengths(std::array::from_fn(|b| self.0[b] * scale[tree::finger_index(b)]))
    }

    pub fn palmar_mean(&self) -> f64 {
        self.0[..NUM_FINGERS].iter().sum::<f64>() / NUM_FINGERS as f64
    }
}

/// Unnormalized bone vectors `joint[child] - joint[parent]`.
pub fn raw_bones_of<T: Scalar>(joints: &[Vec3<T>; NUM_JOINTS]) -> [Vec3<T>; NUM_BONES] {
    std::array::from_fn(|b| joints[tree::child_joint(b)] - joints[tree::parent_joint(b)])
}

/// The map K: joints → (unit bone directions, bone lengths).
pub fn bone_vectors_of<T: Scalar>(
    joints: &[Vec3<T>; NUM_JOINTS],
) -> ([Vec3<T>; NUM_BONES], [T; NUM_BONES]) {
    let raw = raw_bones_of(joints);
    let lengths = raw.map(|v| v.norm());
    let dirs = std::array::from_fn(|b| raw[b] / lengths[b]);
    (dirs, lengths)
}

pub fn bone_lengths_of<T: Scalar>(joints: &[Vec3<T>; NUM_JOINTS]) -> [T; NUM_BONES] {
    raw_bones_of(joints).map(|v| v.norm())
}

/// Re-accumulates joints from bone vectors along the tree, root at `root`.
pub fn joints_from_bones(root: Vec3, bones: &BoneVectors) -> [Vec3; NUM_JOINTS] {
    let mut joints = [root; NUM_JOINTS];
    for level in 0..4 {
        for finger in 0..NUM_FINGERS {
            let b = tree::bone(finger, level);
            joints[tree::child_joint(b)] =
                joints[tree::parent_joint(b)] + bones.directions[b] * bones.lengths[b];
        }
    }
    joints
}
