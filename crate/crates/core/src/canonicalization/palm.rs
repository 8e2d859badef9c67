//! Palm measurements and palm normalization.
//!
//! Plane angles are stored as signed folds: positive values cup the palm
//! towards its inner side. With normals `n_i = norm(b_{i+1} × b_i)` the fold
//! between planes i and i+1 is `sign_i * dihedral`, where the dihedrals are
//! measured about the shared bone (thumb–index about b2 from n2 to n1,
//! index–middle/middle–ring about b3 from n2 to n3, middle–ring/ring–pinky
//! about b4 from n3 to n4).

use crate::diffcore::Scalar;
use crate::geometry::{Mat3, Vec3};

use super::{CanonError, CanonicalPose, COLLINEAR_EPS};

pub(crate) const FOLD_SIGN: [f64; 3] = [-1.0, 1.0, 1.0];

/// `atan2(|a × b|, a · b)`, the unsigned angle in `[0, π]`.
pub(crate) fn angle_between<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Angle from `a` to `b` about `axis`, in `(-π, π]`.
pub(crate) fn signed_angle<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>, axis: &Vec3<T>) -> T {
    a.cross(b).dot(axis).atan2(a.dot(b))
}

pub(crate) fn check_palm<T: Scalar>(palm: &[Vec3<T>; 5]) -> Result<(), CanonError> {
    for i in 0..4 {
        let c = palm[i + 1].val().cross(&palm[i].val()).norm();
        if c.is_nan() || c < COLLINEAR_EPS {
            return Err(CanonError::CollinearPalmarBones { pair: i });
        }
    }
    Ok(())
}

/// `n_i = norm(b_{i+1} × b_i)` for the four adjacent palmar pairs.
pub(crate) fn palm_normals<T: Scalar>(palm: &[Vec3<T>; 5]) -> [Vec3<T>; 4] {
    std::array::from_fn(|i| palm[i + 1].cross(&palm[i]).normalize())
}

pub(crate) fn spreads<T: Scalar>(palm: &[Vec3<T>; 5]) -> [T; 4] {
    std::array::from_fn(|i| angle_between(&palm[i], &palm[i + 1]))
}

pub(crate) fn folds<T: Scalar>(palm: &[Vec3<T>; 5]) -> [T; 3] {
    let n = palm_normals(palm);
    [
        signed_angle(&n[1], &n[0], &palm[1]) * FOLD_SIGN[0],
        signed_angle(&n[1], &n[2], &palm[2]) * FOLD_SIGN[1],
        signed_angle(&n[2], &n[3], &palm[3]) * FOLD_SIGN[2],
    ]
}

/// Rotation that takes the middle palmar bone to +y and the index–middle
/// normal to −z.
pub(crate) fn palm_alignment<T: Scalar>(palm: &[Vec3<T>; 5]) -> Mat3<T> {
    let y = palm[2];
    let z = -palm[2].cross(&palm[1]).normalize();
    let x = y.cross(&z);
    Mat3::from_cols(x, y, z).transpose()
}

/// Per-palmar-bone rotations bringing the palm to the canonical spreads and
/// folds. The middle bone and the index–middle plane are held fixed; rotations
/// of the index bone propagate to the thumb and of the ring bone to the pinky.
pub(crate) fn normalize_palm_generic<T: Scalar>(
    palm: &[Vec3<T>; 5],
    canon: &CanonicalPose,
) -> [Mat3<T>; 5] {
    let mut b = *palm;
    let mut p = [Mat3::<T>::identity(); 5];
    let mut apply = |b: &mut [Vec3<T>; 5], rot: Mat3<T>, idx: &[usize]| {
        for &k in idx {
            b[k] = rot.mul_vec(&b[k]);
            p[k] = rot.mul_mat(&p[k]);
        }
    };
    let target = |i: usize| T::cst(canon.folds[i] * FOLD_SIGN[i]);

    // plane angles: rotate the outer bone about the shared bone
    let n = palm_normals(&b);
    let d = target(0) - signed_angle(&n[1], &n[0], &b[1]);
    let r = Mat3::rotation(&b[1], d);
    apply(&mut b, r, &[0]);

    let d = target(1) - signed_angle(&n[1], &n[2], &b[2]);
    let r = Mat3::rotation(&b[2], d);
    apply(&mut b, r, &[3, 4]);

    let n = palm_normals(&b);
    let d = target(2) - signed_angle(&n[2], &n[3], &b[3]);
    let r = Mat3::rotation(&b[3], d);
    apply(&mut b, r, &[4]);

    // spreads: rotate the outer bone within its plane
    let axis = b[2].cross(&b[1]).normalize();
    let d = T::cst(canon.spreads[1]) - angle_between(&b[1], &b[2]);
    apply(&mut b, Mat3::rotation(&axis, d), &[0, 1]);

    let axis = b[1].cross(&b[0]).normalize();
    let d = T::cst(canon.spreads[0]) - angle_between(&b[0], &b[1]);
    apply(&mut b, Mat3::rotation(&axis, d), &[0]);

    let axis = b[2].cross(&b[3]).normalize();
    let d = T::cst(canon.spreads[2]) - angle_between(&b[2], &b[3]);
    apply(&mut b, Mat3::rotation(&axis, d), &[3, 4]);

    let axis = b[3].cross(&b[4]).normalize();
    let d = T::cst(canon.spreads[3]) - angle_between(&b[3], &b[4]);
    apply(&mut b, Mat3::rotation(&axis, d), &[4]);

    p
}

/// Palm directions in the aligned frame (middle bone +y, index–middle
/// normal −z) with the given spreads and signed folds.
pub(crate) fn palm_from_angles(spreads: &[f64; 4], folds: &[f64; 3]) -> [Vec3; 5] {
    let b3 = Vec3::new(0.0, 1.0, 0.0);
    let n2 = Vec3::new(0.0, 0.0, -1.0);
    let b2 = Mat3::rotation(&n2, spreads[1]).mul_vec(&b3);
    let n1 = Mat3::rotation(&b2, folds[0] * FOLD_SIGN[0]).mul_vec(&n2);
    let b1 = Mat3::rotation(&n1, spreads[0]).mul_vec(&b2);
    let n3 = Mat3::rotation(&b3, folds[1] * FOLD_SIGN[1]).mul_vec(&n2);
    let b4 = Mat3::rotation(&-n3, spreads[2]).mul_vec(&b3);
    let n4 = Mat3::rotation(&b4, folds[2] * FOLD_SIGN[2]).mul_vec(&n3);
    let b5 = Mat3::rotation(&-n4, spreads[3]).mul_vec(&b4);
    [b1, b2, b3, b4, b5]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3;

    fn random_palm(seed: u64) -> [Vec3; 5] {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sp = [
            rng.random_range(0.2..1.2),
            rng.random_range(0.05..0.45),
            rng.random_range(0.05..0.45),
            rng.random_range(0.05..0.45),
        ];
        let fo = [
            rng.random_range(0.0..1.4),
            rng.random_range(-0.2..0.5),
            rng.random_range(-0.2..0.5),
        ];
        let rot = Mat3::rotation(&vec3(0.3, -0.4, 0.8).normalize(), rng.random_range(-3.0..3.0));
        palm_from_angles(&sp, &fo).map(|b| rot.mul_vec(&b))
    }

    #[test]
    fn synthesized_palm_measures_back() {
        let sp = [0.7, 0.3, 0.1, 0.25];
        let fo = [1.1, 0.3, -0.1];
        let palm = palm_from_angles(&sp, &fo);
        for (a, b) in spreads(&palm).iter().zip(sp) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in folds(&palm).iter().zip(fo) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_palm_hits_targets() {
        let canon = CanonicalPose::default();
        for seed in 0..50 {
            let palm = random_palm(seed);
            let p = normalize_palm_generic(&palm, &canon);
            let out: [Vec3; 5] = std::array::from_fn(|k| p[k].mul_vec(&palm[k]));
            for (a, b) in spreads(&out).iter().zip(canon.spreads) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in folds(&out).iter().zip(canon.folds) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!(out[2].dist(&palm[2]) < 1e-14);
            for m in &p {
                assert!(m.orthonormality_error() < 1e-12);
            }
        }
    }

    #[test]
    fn alignment_is_standard() {
        let palm = random_palm(7);
        let g = palm_alignment(&palm);
        assert!(g.mul_vec(&palm[2]).dist(&vec3(0.0, 1.0, 0.0)) < 1e-12);
        let n2 = palm[2].cross(&palm[1]).normalize();
        assert!(g.mul_vec(&n2).dist(&vec3(0.0, 0.0, -1.0)) < 1e-12);
        assert!((g.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cupping_moves_outer_bones_palmward() {
        // positive folds tilt thumb and ring/pinky towards +z, the palm side
        let palm = palm_from_angles(&[0.4, 0.2, 0.2, 0.2], &[0.8, 0.2, 0.2]);
        assert!(palm[0].z > 0.0);
        assert!(palm[3].z > 0.0);
        assert!(palm[4].z > palm[3].z);
    }
}
