use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::vec3;
use crate::skeleton::Handedness;
use crate::testutil::{random_hand, random_motion};

fn points_near(s: &Skeleton, n: usize, seed: u64) -> Vec<Vec3> {
    let (lo, hi) = s.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            vec3(
                rng.random_range(lo.x - 20.0..hi.x + 20.0),
                rng.random_range(lo.y - 20.0..hi.y + 20.0),
                rng.random_range(lo.z - 20.0..hi.z + 20.0),
            )
        })
        .collect()
}

fn model(mode: Mode, seed: u64) -> HandOccupancyModel {
    HandOccupancyModel::init(OccupancyConfig::with_mode(mode), seed).unwrap()
}

#[test]
fn zero_model_is_one_half_everywhere() {
    let s = random_hand(1);
    for mode in Mode::ALL {
        let m = HandOccupancyModel::zeros(OccupancyConfig::with_mode(mode)).unwrap();
        for v in m.query(&s, &points_near(&s, 300, 2)).unwrap() {
            assert_eq!(v, 0.5);
        }
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    let a = model(Mode::HaloFull, 9);
    let b = model(Mode::HaloFull, 9);
    let c = model(Mode::HaloFull, 10);
    assert_eq!(a, b);
    assert_ne!(a.params(), c.params());
    assert!(a.params().iter().all(|v| v.is_finite()));
}

#[test]
fn parameter_count_matches_layer_sizes() {
    // per part: projector 8*48, first layer 40*(3+features)+40,
    // three residual layers 3*(1600+40), output 41
    let nasa = 384 + 40 * 11 + 40 + 3 * 1640 + 41;
    let local = 384 + 40 * 12 + 40 + 3 * 1640 + 41;
    let full = 384 + 40 * 28 + 40 + 3 * 1640 + 41;
    let encoder = 40 * 16 + 40 + 16 * 40 + 16;
    assert_eq!(nasa, 5825);
    let cases = [
        (Mode::NasaBaseline, 16 * nasa),
        (Mode::HaloLocal, 16 * local),
        (Mode::HaloFull, 16 * full + encoder),
    ];
    for (mode, want) in cases {
        let cfg = OccupancyConfig::with_mode(mode);
        assert_eq!(HandOccupancyModel::param_count(&cfg), want);
        assert_eq!(model(mode, 0).num_params(), want);
    }
}

#[test]
fn occupancy_is_max_over_parts() {
    let s = random_hand(3);
    let pts = points_near(&s, 200, 4);
    for mode in Mode::ALL {
        let m = model(mode, 1);
        let q = m.query(&s, &pts).unwrap();
        let parts = m.part_occupancies(&s, &pts).unwrap();
        let (q2, arg) = m.query_with_parts(&s, &pts).unwrap();
        let desc = m.pose_descriptor(&s).unwrap();
        let feats = m.part_features(&s).unwrap();
        for i in 0..pts.len() {
            let mx = parts[i].iter().copied().fold(f64::MIN, f64::max);
            assert_eq!(q[i], mx);
            assert_eq!(q2[i], q[i]);
            assert_eq!(parts[i][arg[i]], q[i]);
            assert!(q[i] > 0.0 && q[i] < 1.0);
        }
        for i in 0..10 {
            for b in 0..NUM_PARTS {
                let xc = desc.transforms[b].apply(&pts[i]);
                let v = m.part_occupancy(b, &xc, &feats[b]).unwrap();
                assert!((v - parts[i][b]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn part_index_is_checked() {
    let m = model(Mode::HaloLocal, 0);
    let f = vec![0.0; m.config().feature_dim()];
    assert!(matches!(
        m.part_occupancy(16, &Vec3::zero(), &f),
        Err(Error::PartIndexOutOfRange(16))
    ));
    assert!(matches!(m.part_occupancy(0, &Vec3::zero(), &f[1..]), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn results_do_not_depend_on_batching() {
    let s = random_hand(5);
    let pts = points_near(&s, 2 * CHUNK + 17, 6);
    let m = model(Mode::HaloFull, 2);
    let all = m.query(&s, &pts).unwrap();
    let head = m.query(&s, &pts[..100]).unwrap();
    let one = m.query(&s, &pts[CHUNK + 3..CHUNK + 4]).unwrap();
    assert_eq!(&all[..100], &head[..]);
    assert_eq!(all[CHUNK + 3], one[0]);
    let seq = par::sequential(|| m.query(&s, &pts).unwrap());
    assert_eq!(all, seq);
}

#[test]
fn dropout_is_keyed_by_seed() {
    let s = random_hand(5);
    let pts = points_near(&s, 300, 6);
    let m = model(Mode::HaloFull, 2);
    let a = m.query_occupancy(&s, &pts, QueryMode::Train { seed: 1 }).unwrap();
    let b = m.query_occupancy(&s, &pts, QueryMode::Train { seed: 1 }).unwrap();
    let c = m.query_occupancy(&s, &pts, QueryMode::Train { seed: 2 }).unwrap();
    let inf = m.query(&s, &pts).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, inf);
}

#[test]
fn nasa_ignores_bone_lengths() {
    // lengthening the distal bones moves only the fingertips, which leaves
    // every part transform and the pose stack unchanged
    let s = random_hand(7);
    let mut j = *s.joints();
    for f in 0..NUM_FINGERS {
        let tip = 4 + 4 * f;
        j[tip] = j[tip - 1] + (j[tip] - j[tip - 1]) * 1.3;
    }
    let longer = Skeleton::from_right_joints(j, Handedness::Right).unwrap();
    let pts = points_near(&s, 300, 8);
    let changed = |m: &HandOccupancyModel, part: usize| -> f64 {
        let a = m.part_occupancies(&s, &pts).unwrap();
        let b = m.part_occupancies(&longer, &pts).unwrap();
        a.iter().zip(&b).map(|(x, y)| (x[part] - y[part]).abs()).fold(0.0, f64::max)
    };
    let nasa = model(Mode::NasaBaseline, 3);
    for part in 0..NUM_PARTS {
        assert!(changed(&nasa, part) < 1e-12, "part {part}");
    }
    // distal parts see their own length in both modes; only the global
    // encoder passes the change on to the other parts
    let distal = tree::bone(1, 3) - NUM_FINGERS + 1;
    let local = model(Mode::HaloLocal, 3);
    assert!(changed(&local, distal) > 1e-9);
    assert!(changed(&local, 0) < 1e-12);
    let full = model(Mode::HaloFull, 3);
    assert!(changed(&full, distal) > 1e-9);
    assert!(changed(&full, 0) > 1e-9);
}

#[test]
fn invariant_under_rigid_motion() {
    for seed in 0..10 {
        let s = random_hand(seed);
        let g = random_motion(seed);
        let pts = points_near(&s, 200, seed + 100);
        let moved: Vec<Vec3> = pts.iter().map(|p| g.apply(p)).collect();
        for mode in Mode::ALL {
            let m = model(mode, seed);
            let a = m.query(&s, &pts).unwrap();
            let b = m.query(&s.transformed(&g), &moved).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-5, "{mode:?} {x} {y}");
            }
        }
    }
}

#[test]
fn descriptor_distinct_and_translation_invariant() {
    let m = model(Mode::HaloFull, 4);
    let mut seen: Vec<Vec<f64>> = vec![];
    for seed in 0..20 {
        let s = random_hand(seed);
        let d = m.pose_descriptor(&s).unwrap();
        let shifted = m.pose_descriptor(&s.translated(vec3(40.0, -75.0, 310.0))).unwrap();
        assert_eq!(d.features.len(), NUM_PARTS);
        for (a, b) in d.features.iter().zip(&shifted.features) {
            assert_eq!(a.len(), 8);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let flat: Vec<f64> = d.features.concat();
        for other in &seen {
            let diff = flat.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff > 1e-6);
        }
        seen.push(flat);
    }
}

#[test]
fn canonical_descriptor_uses_canonical_offsets() {
    // in the canonical pose every part transform is the identity, so the
    // stack holds the root joint itself for all parts
    let s = crate::canonicalization::canonical_skeleton(&crate::skeleton::BoneLengths::reference());
    let pi = pose_inputs(s.joints(), &OccupancyConfig::default()).unwrap();
    for p in 1..NUM_PARTS {
        assert!(pi.transforms[p].trans.norm() < 1e-10);
        for k in 0..3 {
            assert!((pi.stack[3 * p + k] - pi.stack[k]).abs() < 1e-12);
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

#[test]
fn joint_gradient_matches_frozen_differences() {
    for (seed, mode) in [(0, Mode::HaloFull), (1, Mode::HaloLocal), (2, Mode::NasaBaseline)] {
        let s = random_hand(seed + 20);
        let pts = points_near(&s, 256, seed);
        let m = model(mode, seed);
        let n = pts.len() as f64;
        let g = m.occupancy_gradient(&s, &pts, None, |v| vec![1.0 / n; v.len()]).unwrap();
        let pat = &g.pattern;
        let mean = |x: &[f64]| {
            let sk = Skeleton::from_flat(x, Handedness::Right).unwrap();
            m.query_frozen(&sk, &pts, pat).unwrap().iter().sum::<f64>() / n
        };
        let x0 = s.to_flat();
        let v0: f64 = m.query(&s, &pts).unwrap().iter().sum::<f64>() / n;
        assert!((mean(&x0) - v0).abs() < 1e-15);
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[i] += h;
            xm[i] -= h;
            let num = (mean(&xp) - mean(&xm)) / (2.0 * h);
            // rounding in the difference quotient is about eps * |f| / h
            let resolvable = 1e-14 * v0.abs().max(1.0) / h;
            let err = ((g.joints[i] - num).abs() - resolvable).max(0.0);
            worst = worst.max(err / g.joints[i].abs().max(num.abs()).max(1e-8));
        }
        assert!(worst < 1e-4, "{mode:?}: {worst}");
    }
}

#[test]
fn point_gradient_matches_differences() {
    let s = random_hand(11);
    let pts = points_near(&s, 32, 12);
    let m = model(Mode::HaloFull, 5);
    let g = m.occupancy_gradient(&s, &pts, None, |v| vec![1.0; v.len()]).unwrap();
    let h = 1e-4;
    for (i, p) in pts.iter().enumerate() {
        for k in 0..3 {
            let mut a = p.to_array();
            let mut b = p.to_array();
            a[k] += h;
            b[k] -= h;
            let q = |c: [f64; 3]| m.query_frozen(&s, &[Vec3::from_array(c)], &pattern_row(&g.pattern, i)).unwrap()[0];
            let num = (q(a) - q(b)) / (2.0 * h);
            assert!(rel_err(g.points[i].to_array()[k], num) < 1e-5);
        }
    }
}

fn pattern_row(p: &ActivationPattern, i: usize) -> ActivationPattern {
    ActivationPattern {
        part: vec![p.part[i]],
        signs: p.signs[i * p.layers..(i + 1) * p.layers].to_vec(),
        layers: p.layers,
    }
}

fn batch_for(s: &Skeleton, seed: u64) -> (Vec<Vec3>, Vec<u8>, Vec<Vec3>, Vec<[f64; NUM_PARTS]>) {
    let pts = points_near(s, 48, seed);
    let labels = (0..pts.len()).map(|i| (i % 3 == 0) as u8).collect();
    let surf = points_near(s, 12, seed + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skin = surf
        .iter()
        .map(|_| {
            let raw: [f64; NUM_PARTS] = std::array::from_fn(|_| rng.random::<f64>());
            let t: f64 = raw.iter().sum();
            raw.map(|v| v / t)
        })
        .collect();
    (pts, labels, surf, skin)
}

#[test]
fn parameter_gradient_matches_differences() {
    for (mode, kind) in [
        (Mode::HaloFull, LossKind::Mse),
        (Mode::HaloLocal, LossKind::Bce),
        (Mode::NasaBaseline, LossKind::Mse),
    ] {
        let s = random_hand(30);
        let (pts, labels, surf, skin) = batch_for(&s, 31);
        let batch = SampleBatch {
            points: &pts,
            labels: &labels,
            surface: &surf,
            skin: &skin,
        };
        let opts = LossOptions {
            lambda_skin: 0.5,
            kind,
            dropout_seed: Some(77),
        };
        let m = model(mode, 6);
        let p: Vec<f64> = m.params_as();
        let mut grad = vec![0.0; p.len()];
        let l = m.loss_gradient(&p, &s, &batch, &opts, &mut grad).unwrap();
        let lv = m.loss_value(&p, &s, &batch, &opts).unwrap();
        assert!((l.total - lv.total).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx: Vec<usize> = (0..300).map(|_| rng.random_range(0..p.len())).collect();
        if let Some(e) = &m.layout().encoder {
            idx.extend([e.w1 + 5, e.b1 + 2, e.w2 + 17, e.b2 + 1]);
        }
        idx.extend([m.layout().proj + 3, m.layout().w1 + 5, m.layout().w1 + 3]);
        let h = 1e-6;
        let mut bad = 0;
        for &i in &idx {
            let mut pp = p.clone();
            pp[i] += h;
            let up = m.loss_value(&pp, &s, &batch, &opts).unwrap().total;
            pp[i] -= 2.0 * h;
            let dn = m.loss_value(&pp, &s, &batch, &opts).unwrap().total;
            let num = (up - dn) / (2.0 * h);
            if (grad[i] - num).abs() > 1e-5 * num.abs().max(1e-3) {
                bad += 1;
                eprintln!("{mode:?} param {i}: analytic {} numeric {num}", grad[i]);
            }
        }
        assert_eq!(bad, 0, "{mode:?}");
    }
}

#[test]
fn single_precision_gradient_tracks_double() {
    let s = random_hand(32);
    let (pts, labels, surf, skin) = batch_for(&s, 33);
    let batch = SampleBatch {
        points: &pts,
        labels: &labels,
        surface: &surf,
        skin: &skin,
    };
    let opts = LossOptions {
        dropout_seed: Some(5),
        ..Default::default()
    };
    let m = model(Mode::HaloFull, 7);
    let p64: Vec<f64> = m.params_as();
    let p32: Vec<f32> = m.params_as();
    let mut g64 = vec![0.0; p64.len()];
    let mut g32 = vec![0.0; p64.len()];
    let l64 = m.loss_gradient(&p64, &s, &batch, &opts, &mut g64).unwrap();
    let l32 = m.loss_gradient(&p32, &s, &batch, &opts, &mut g32).unwrap();
    assert!((l64.total - l32.total).abs() < 1e-4 * l64.total.abs().max(1e-3));
    let norm = g64.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = g64.iter().zip(&g32).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(diff < 1e-3 * norm, "{diff} vs {norm}");
}

#[test]
fn occupancy_loss_reference_values() {
    assert_eq!(backprop::point_loss(LossKind::Mse, 0.0, 1.0).0, 0.25);
    assert_eq!(backprop::point_loss(LossKind::Mse, 0.0, 0.0).0, 0.25);
    assert!(backprop::point_loss(LossKind::Mse, 40.0, 1.0).0 < 1e-30);
    let (l, d) = backprop::point_loss(LossKind::Bce, 0.0, 1.0);
    assert!((l - 2f64.ln()).abs() < 1e-15 && (d + 0.5).abs() < 1e-15);
    assert!(backprop::point_loss(LossKind::Bce, -800.0, 0.0).0.is_finite());
}
