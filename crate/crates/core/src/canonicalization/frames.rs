//! Local bone frames and flexion/abduction angles.

use serde::{Deserialize, Serialize};

use crate::diffcore::Scalar;
use crate::geometry::{Mat3, Vec3};

use super::{CanonError, DEGENERATE_EPS};

/// Right-handed orthonormal frame; `z` points along the parent bone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
}

impl LocalFrame {
    pub fn from_matrix(m: &Mat3) -> Self {
        LocalFrame {
            x: m.col(0),
            y: m.col(1),
            z: m.col(2),
        }
    }

    /// Columns `[x y z]`.
    pub fn matrix(&self) -> Mat3 {
        Mat3::from_cols(self.x, self.y, self.z)
    }
}

/// `R(θf, θa) = Ry(θf) · Rx(−θa)`, so that
/// `R e_z = (cos θa sin θf, sin θa, cos θa cos θf)`.
pub(crate) fn angle_rotation<T: Scalar>(flex: T, abd: T) -> Mat3<T> {
    Mat3::rot_y(flex).mul_mat(&Mat3::rot_x(-abd))
}

/// Flexion and abduction of a unit direction given in local coordinates.
///
/// The radius of the xz projection goes through a smooth clamp so that a
/// bone parallel to y yields θa = ±π/2, θf = 0 with finite gradients.
pub(crate) fn local_angles<T: Scalar>(l: &Vec3<T>) -> (T, T) {
    let flex = l.x.atan2(l.z);
    let r_sq = (l.x * l.x + l.z * l.z).clamp_min_smooth(1e-14, 1e-14);
    let abd = l.y.atan2(r_sq.sqrt());
    (flex, abd)
}

/// Flexion θf (signed angle from z to the xz projection, positive towards x)
/// and abduction θa (signed elevation out of the xz plane, positive towards y).
pub fn extract_flexion_abduction(bone: &Vec3, frame: &LocalFrame) -> (f64, f64) {
    let m = frame.matrix();
    local_angles(&m.transpose().mul_vec(bone))
}

/// Level-1 frames from a (normalized) palm: z along the palmar bone,
/// x from the adjacent palm normals, y = z × x.
pub(crate) fn level1_frames<T: Scalar>(
    palm: &[Vec3<T>; 5],
    normals: &[Vec3<T>; 4],
) -> Result<[Mat3<T>; 5], CanonError> {
    let n = normals;
    let xs = [
        -n[0],
        -n[1],
        -(n[1] + n[2]).normalize(),
        -(n[2] + n[3]).normalize(),
        -n[3],
    ];
    let mut out = [Mat3::<T>::identity(); 5];
    for f in 0..5 {
        let z = palm[f];
        // re-orthogonalize; exact up to rounding for a consistent palm
        let x = xs[f] - z.scale(xs[f].dot(&z));
        let xn = x.norm().val();
        if xn.is_nan() || xn < DEGENERATE_EPS {
            return Err(CanonError::DegenerateFrame { bone: 5 + f });
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let yn = y.norm().val();
        if yn.is_nan() || yn < DEGENERATE_EPS {
            return Err(CanonError::DegenerateFrame { bone: 5 + f });
        }
        out[f] = Mat3::from_cols(x, y.normalize(), z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3;
    use proptest::prelude::*;

    fn identity_frame() -> LocalFrame {
        LocalFrame {
            x: vec3(1.0, 0.0, 0.0),
            y: vec3(0.0, 1.0, 0.0),
            z: vec3(0.0, 0.0, 1.0),
        }
    }

    #[test]
    fn bone_along_z_is_zero() {
        assert_eq!(extract_flexion_abduction(&vec3(0.0, 0.0, 1.0), &identity_frame()), (0.0, 0.0));
    }

    #[test]
    fn bone_along_x_is_pure_flexion() {
        let (f, a) = extract_flexion_abduction(&vec3(1.0, 0.0, 0.0), &identity_frame());
        assert!((f - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(a, 0.0);
    }

    #[test]
    fn bone_along_y_is_singular_but_finite() {
        let (f, a) = extract_flexion_abduction(&vec3(0.0, -1.0, 0.0), &identity_frame());
        assert_eq!(f, 0.0);
        assert!((a + std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn rotate_then_extract_round_trips(f in -3.1..3.1f64, a in -1.5..1.5f64,
                                           ax in prop::array::uniform3(-1.0..1.0f64), ang in -3.0..3.0f64) {
            let axis = vec3(ax[0], ax[1], ax[2] + 2.0).normalize();
            let frame = LocalFrame::from_matrix(&Mat3::rotation(&axis, ang));
            let bone = frame.matrix().mul_vec(&angle_rotation(f, a).mul_vec(&vec3(0.0, 0.0, 1.0)));
            let (f2, a2) = extract_flexion_abduction(&bone, &frame);
            prop_assert!((f - f2).abs() < 1e-8, "{} {}", f, f2);
            prop_assert!((a - a2).abs() < 1e-8, "{} {}", a, a2);
        }
    }
}
