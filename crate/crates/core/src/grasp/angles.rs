//! Angle and bone-length losses between a predicted and a target hand.

use serde::{Deserialize, Serialize};

use crate::canonicalization::{canonicalize_generic, AngleSet, CanonicalPose};
use crate::diffcore::Scalar;
use crate::geometry::Vec3;
use crate::skeleton::{bone_lengths_of, Skeleton, NUM_BONES, NUM_JOINTS};
use crate::Error;

/// Mean absolute angle difference (rad) per family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleLosses<T = f64> {
    pub flexion: T,
    pub abduction: T,
    pub spread: T,
    pub plane: T,
}

fn mean_l1<T: Scalar>(a: &[T], b: &[f64]) -> T {
    let mut acc = T::cst(0.0);
    for (x, &y) in a.iter().zip(b) {
        acc = acc + (*x - y).abs();
    }
    acc / a.len() as f64
}

/// Angle losses of predicted joints against target angles, generic so they
/// can be differentiated with respect to the prediction.
pub fn angle_losses_generic<T: Scalar>(pred: &[Vec3<T>; NUM_JOINTS], target: &AngleSet) -> Result<AngleLosses<T>, Error> {
    let a = canonicalize_generic(pred, &CanonicalPose::default())?.angles;
    Ok(AngleLosses {
        flexion: mean_l1(&a.flexion, &target.flexion),
        abduction: mean_l1(&a.abduction, &target.abduction),
        spread: mean_l1(&a.spread, &target.spread),
        plane: mean_l1(&a.plane, &target.plane),
    })
}

pub fn angle_losses(pred: &Skeleton, gt: &Skeleton) -> Result<AngleLosses, Error> {
    let target = crate::canonicalization::canonical_angles_of(gt)?;
    angle_losses_generic(pred.joints(), &target)
}

/// Mean absolute bone-length difference (mm).
pub fn bone_length_loss_generic<T: Scalar>(pred: &[Vec3<T>; NUM_JOINTS], target: &[f64; NUM_BONES]) -> T {
    mean_l1(&bone_lengths_of(pred), target)
}

pub fn bone_length_loss(pred: &Skeleton, gt: &Skeleton) -> f64 {
    bone_length_loss_generic(pred.joints(), &gt.bone_lengths().0)
}
