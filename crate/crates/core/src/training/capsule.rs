//! Procedural capsule hands with an exact inside test.

use rand::Rng;

use crate::geometry::{Capsule, Vec3};
use crate::occupancy::NUM_PARTS;
use crate::skeleton::{tree, BoneLengths, Skeleton, NUM_BONES, NUM_FINGERS};

/// Capsule radii (mm) at reference bone lengths: palm, then per finger
/// the three finger bones from proximal to distal.
pub const PALM_RADIUS: f64 = 12.0;
pub const FINGER_RADII: [[f64; 3]; NUM_FINGERS] = [
    [10.0, 9.0, 8.0],
    [9.0, 8.0, 7.0],
    [9.0, 8.0, 7.0],
    [8.5, 7.5, 6.5],
    [8.0, 7.0, 6.0],
];
/// Skinning softmax temperature (mm).
pub const SKIN_TEMPERATURE: f64 = 5.0;

/// A hand made of one capsule per bone; the palm is the union of the five
/// palmar capsules.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleHand {
    pub skeleton: Skeleton,
    pub radii: [f64; NUM_BONES],
    capsules: Vec<Capsule>,
}

impl CapsuleHand {
    /// Radii scaled per finger by the finger's total length relative to the
    /// reference; the palm by the mean finger scale.
    pub fn default_radii(lengths: &BoneLengths) -> [f64; NUM_BONES] {
        let reference = BoneLengths::reference();
        let finger_scale: [f64; NUM_FINGERS] = std::array::from_fn(|f| {
            let sum = |l: &BoneLengths| (1..4).map(|lvl| l.0[tree::bone(f, lvl)]).sum::<f64>();
            sum(lengths) / sum(&reference)
        });
        let palm = PALM_RADIUS * finger_scale.iter().sum::<f64>() / NUM_FINGERS as f64;
        std::array::from_fn(|b| {
            let level = tree::level(b);
            if level == 0 {
                palm
            } else {
                FINGER_RADII[tree::finger_index(b)][level - 1] * finger_scale[tree::finger_index(b)]
            }
        })
    }

    pub fn new(skeleton: Skeleton, radii: [f64; NUM_BONES]) -> Self {
        assert!(radii.iter().all(|&r| r > 0.0), "capsule radii must be positive");
        let j = skeleton.joints();
        let capsules = (0..NUM_BONES)
            .map(|b| Capsule::new(j[tree::parent_joint(b)], j[tree::child_joint(b)], radii[b]))
            .collect();
        CapsuleHand {
            skeleton,
            radii,
            capsules,
        }
    }

    pub fn with_default_radii(skeleton: Skeleton) -> Self {
        let radii = Self::default_radii(&skeleton.bone_lengths());
        Self::new(skeleton, radii)
    }

    pub fn capsules(&self) -> &[Capsule] {
        &self.capsules
    }

    /// Signed distance bound: exact outside and on the surface, negative
    /// exactly inside.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        self.capsules.iter().map(|c| c.sdf(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn inside(&self, p: &Vec3) -> bool {
        self.capsules.iter().any(|c| c.contains(p))
    }

    /// Signed distance to each part's shape (palm: union of the palmar
    /// capsules).
    pub fn part_distances(&self, p: &Vec3) -> [f64; NUM_PARTS] {
        std::array::from_fn(|part| {
            if part == 0 {
                self.capsules[..NUM_FINGERS].iter().map(|c| c.sdf(p)).fold(f64::INFINITY, f64::min)
            } else {
                self.capsules[NUM_FINGERS - 1 + part].sdf(p)
            }
        })
    }

    /// Softmax over parts of `-distance / SKIN_TEMPERATURE`.
    pub fn skinning_weights(&self, p: &Vec3) -> [f64; NUM_PARTS] {
        let d = self.part_distances(p);
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let e = d.map(|v| (-(v - lo) / SKIN_TEMPERATURE).exp());
        let s: f64 = e.iter().sum();
        e.map(|v| v / s)
    }

    /// Area-uniform sample of the union's surface: a capsule is chosen by
    /// area, a point drawn on it, and rejected if another capsule covers it.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let areas: Vec<f64> = self.capsules.iter().map(Capsule::area).collect();
        let total: f64 = areas.iter().sum();
        loop {
            let mut u = rng.random::<f64>() * total;
            let mut k = 0;
            while k + 1 < areas.len() && u >= areas[k] {
                u -= areas[k];
                k += 1;
            }
            let p = self.capsules[k].sample_surface(rng);
            let covered = self
                .capsules
                .iter()
                .enumerate()
                .any(|(i, c)| i != k && c.contains(&p));
            if !covered {
                return p;
            }
        }
    }

    /// Axis-aligned bounds of all capsules.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for c in &self.capsules {
            let (a, b) = c.bounds();
            lo = lo.min_elem(&a);
            hi = hi.max_elem(&b);
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3;
    use crate::testutil::random_hand;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bone_midpoint_inside_far_point_outside() {
        let h = CapsuleHand::with_default_radii(random_hand(1));
        for c in h.capsules() {
            let mid = (c.a + c.b) * 0.5;
            assert!(h.inside(&mid));
        }
        assert!(!h.inside(&vec3(1000.0, 0.0, 0.0)));
        // radius + 1 mm from the only capsule
        let c = Capsule::new(vec3(0.0, 0.0, 0.0), vec3(0.0, 40.0, 0.0), 8.0);
        assert!(!c.contains(&vec3(9.0, 20.0, 0.0)));
        assert!(c.contains(&vec3(7.0, 20.0, 0.0)));
    }

    #[test]
    fn capsule_volume_matches_monte_carlo() {
        let c = Capsule::new(vec3(-5.0, 3.0, 1.0), vec3(20.0, -7.0, 12.0), 6.0);
        let (lo, hi) = c.bounds();
        let ext = hi - lo;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400_000;
        let hits = (0..n)
            .filter(|_| {
                let p = vec3(
                    lo.x + ext.x * rng.random::<f64>(),
                    lo.y + ext.y * rng.random::<f64>(),
                    lo.z + ext.z * rng.random::<f64>(),
                );
                c.contains(&p)
            })
            .count();
        let mc = hits as f64 / n as f64 * ext.x * ext.y * ext.z;
        let analytic = std::f64::consts::PI * 36.0 * c.length() + 4.0 / 3.0 * std::f64::consts::PI * 216.0;
        assert!((mc / analytic - 1.0).abs() < 0.01, "{mc} {analytic}");
        assert!((c.volume() - analytic).abs() < 1e-9);
    }

    #[test]
    fn surface_samples_lie_on_the_union_surface() {
        let h = CapsuleHand::with_default_radii(random_hand(2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5000 {
            let p = h.sample_surface(&mut rng);
            assert!(h.sdf(&p).abs() <= 1e-9);
        }
    }

    #[test]
    fn capsule_surface_is_area_uniform() {
        // cylinder share of samples equals its share of area
        let c = Capsule::new(vec3(0.0, 0.0, 0.0), vec3(0.0, 0.0, 30.0), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let side = (0..n)
            .filter(|_| {
                let p = c.sample_surface(&mut rng);
                p.z > 1e-9 && p.z < 30.0 - 1e-9
            })
            .count();
        let want = 30.0 / 40.0;
        assert!((side as f64 / n as f64 - want).abs() < 0.01);
    }

    #[test]
    fn skinning_weights_are_a_distribution_favoring_the_owner() {
        let h = CapsuleHand::with_default_radii(random_hand(3));
        for part in 1..NUM_PARTS {
            let c = &h.capsules()[NUM_FINGERS - 1 + part];
            let p = c.a + (c.b - c.a) * 0.5;
            let w = h.skinning_weights(&p);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let best = (0..NUM_PARTS).max_by(|&i, &j| w[i].total_cmp(&w[j])).unwrap();
            assert_eq!(best, part);
        }
    }

    #[test]
    fn radii_follow_finger_scale() {
        let r = CapsuleHand::default_radii(&BoneLengths::reference());
        assert_eq!(r[0], PALM_RADIUS);
        assert_eq!(r[5], FINGER_RADII[0][0]);
        let long = BoneLengths::reference().scaled_per_finger(&[1.2, 1.0, 1.0, 1.0, 1.0]);
        let r2 = CapsuleHand::default_radii(&long);
        assert!((r2[5] - 1.2 * FINGER_RADII[0][0]).abs() < 1e-12);
        assert!(r2[0] > r[0]);
    }
}
