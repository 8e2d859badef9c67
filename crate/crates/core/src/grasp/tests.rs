use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::canonicalization::{canonical_angles_of, pose_from_angles, AngleRanges};
use crate::geometry::{vec3, Capsule, Mat3, Vec3};
use crate::skeleton::{tree, BoneLengths, Handedness, Skeleton};
use crate::surface::{marching_cubes, pointwise, GridSpec, TriMesh};
use crate::testutil::{fitted_model, random_hand, random_motion};
use crate::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn sphere_and_box_acceptance() {
    let s = ObjectShape::sphere(1.0, Vec3::zero());
    let r = sample_object_interior(&s, 50_000, &mut rng(1)).unwrap();
    assert!((r.acceptance - std::f64::consts::PI / 6.0).abs() < 0.01, "{}", r.acceptance);
    assert!(r.points.iter().all(|p| p.norm() < 1.0));
    let b = ObjectShape::axis_box([10.0, 20.0, 5.0], vec3(1.0, 2.0, 3.0));
    let r = sample_object_interior(&b, 1000, &mut rng(2)).unwrap();
    assert_eq!(r.acceptance, 1.0);
    let again = sample_object_interior(&b, 1000, &mut rng(2)).unwrap();
    assert_eq!(r, again);
}

#[test]
fn thin_objects_stall_the_sampler() {
    let c = ObjectShape::cylinder(1e-3, 100.0, Vec3::zero(), vec3(1.0, 1.0, 1.0));
    assert!(matches!(sample_object_interior(&c, 10, &mut rng(3)), Err(Error::SamplingStalled(_))));
    assert!(matches!(
        sample_object_interior(&ObjectShape::sphere(-1.0, Vec3::zero()), 10, &mut rng(3)),
        Err(Error::Config(_))
    ));
}

#[test]
fn inside_tests_agree_with_meshes() {
    let rotation = Mat3::rotation(&vec3(1.0, -2.0, 0.5).normalize(), 0.6);
    let r: [[f64; 3]; 3] = std::array::from_fn(|i| rotation.row(i).to_array());
    let shapes = [
        ObjectShape::sphere(12.0, vec3(1.0, -2.0, 0.5)),
        ObjectShape::Box {
            size_mm: [20.0, 8.0, 14.0],
            center: [3.0, 0.0, -1.0],
            rotation: r,
        },
        ObjectShape::cylinder(6.0, 25.0, vec3(0.0, 1.0, 2.0), vec3(0.3, 1.0, -0.2)),
    ];
    let volumes = [
        4.0 / 3.0 * std::f64::consts::PI * 12f64.powi(3),
        20.0 * 8.0 * 14.0,
        std::f64::consts::PI * 36.0 * 25.0,
    ];
    for (shape, vol) in shapes.iter().zip(volumes) {
        let mesh = shape.to_mesh(0.5).unwrap();
        mesh.check_watertight().unwrap();
        assert!((mesh.signed_volume() / vol - 1.0).abs() < 0.01, "{shape:?}: {}", mesh.signed_volume());
        let as_mesh = ObjectShape::from_mesh(&mesh);
        as_mesh.validate().unwrap();
        let (lo, hi) = shape.bounds();
        let mut g = rng(4);
        for _ in 0..300 {
            let p = crate::training::uniform_in_box(&(lo - vec3(2.0, 2.0, 2.0)), &(hi + vec3(2.0, 2.0, 2.0)), &mut g);
            if shape.sdf(&p).unwrap().abs() > 0.5 {
                assert_eq!(shape.contains(&p), as_mesh.contains(&p), "{p:?}");
            }
        }
    }
}

#[test]
fn object_json_format() {
    let s: ObjectShape = serde_json::from_str(r#"{"kind":"sphere","radius_mm":30,"center":[0,0,10]}"#).unwrap();
    assert_eq!(s, ObjectShape::sphere(30.0, vec3(0.0, 0.0, 10.0)));
    let c: ObjectShape =
        serde_json::from_str(r#"{"kind":"cylinder","radius_mm":5,"height_mm":40,"center":[0,0,0]}"#).unwrap();
    assert!(c.contains(&vec3(0.0, 0.0, 19.0)) && !c.contains(&vec3(0.0, 0.0, 21.0)));
    let b: ObjectShape = serde_json::from_str(r#"{"kind":"box","size_mm":[1,2,3],"center":[0,0,0]}"#).unwrap();
    let text = serde_json::to_string(&b).unwrap();
    assert_eq!(serde_json::from_str::<ObjectShape>(&text).unwrap(), b);
    assert!(serde_json::from_str::<ObjectShape>(r#"{"kind":"torus"}"#).is_err());
}

fn sphere_interior(radius: f64, center: Vec3, n: usize, seed: u64) -> Vec<Vec3> {
    sample_object_interior(&ObjectShape::sphere(radius, center), n, &mut rng(seed))
        .unwrap()
        .points
}

#[test]
fn loss_vanishes_away_from_the_hand() {
    let (m, hand) = fitted_model();
    let far = sphere_interior(30.0, vec3(1000.0, 0.0, 0.0), 500, 5);
    assert_eq!(interpenetration_loss(m, &hand.skeleton, &far).unwrap(), 0.0);
    assert_eq!(interpenetration_loss(m, &hand.skeleton, &[]).unwrap(), 0.0);
    let g = interpenetration_gradient(m, &hand.skeleton, &far, None).unwrap();
    assert!(g.joints.iter().all(|&v| v == 0.0));
}

#[test]
fn hand_inside_a_sphere_is_bounded_by_the_oracle_count() {
    let (m, hand) = fitted_model();
    let (lo, hi) = hand.bounds();
    let c = (lo + hi) * 0.5;
    let pts = sphere_interior(120.0, c, 4000, 6);
    let loss = interpenetration_loss(m, &hand.skeleton, &pts).unwrap();
    let occ = m.query(&hand.skeleton, &pts).unwrap();
    let gated = occ.iter().filter(|&&o| o > 0.5).count() as f64;
    assert!(loss > 0.5 * gated && loss <= gated);
    // the fitted surface agrees with the oracle up to a thin shell
    let k = pts.iter().filter(|p| hand.inside(p)).count() as f64;
    assert!(k > 20.0);
    assert!((gated - k).abs() < 0.2 * k, "model {gated} oracle {k}");
    assert!(loss > 0.5 * 0.8 * k && loss <= 1.2 * k);
}

#[test]
fn loss_gradient_matches_frozen_differences() {
    let (m, hand) = fitted_model();
    let s = &hand.skeleton;
    let pts = sphere_interior(25.0, s.joint(5) + vec3(5.0, 0.0, 0.0), 512, 7);
    let g = interpenetration_gradient(m, s, &pts, None).unwrap();
    assert!(g.loss > 0.0);
    assert!((g.loss - interpenetration_loss(m, s, &pts).unwrap()).abs() < 1e-9);
    let f = |x: &[f64]| {
        let sk = Skeleton::from_flat(x, Handedness::Right).unwrap();
        interpenetration_loss_gated(m, &sk, &pts, &g.gate).unwrap()
    };
    let x0 = s.to_flat();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..x0.len() {
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp[i] += h;
        xm[i] -= h;
        let num = (f(&xp) - f(&xm)) / (2.0 * h);
        let resolvable = 1e-14 * g.loss.max(1.0) / h;
        let err = ((g.joints[i] - num).abs() - resolvable).max(0.0);
        worst = worst.max(err / g.joints[i].abs().max(num.abs()).max(1e-8));
    }
    assert!(worst < 1e-4, "{worst}");
    // the same gate gives the same gradient
    let again = interpenetration_gradient(m, s, &pts, Some(&g.gate)).unwrap();
    assert_eq!(again.joints, g.joints);
}

#[test]
fn refinement_moves_the_hand_out() {
    let (m, hand) = fitted_model();
    let s = &hand.skeleton;
    // a sphere swallowing the fingertips of the middle finger
    let tip = s.joint(tree::child_joint(tree::bone(2, 3)));
    let pts = sphere_interior(20.0, tip + vec3(0.0, 10.0, 0.0), 2048, 8);
    let r = refine_translation(m, s, &pts, &RefineConfig::default()).unwrap();
    assert_eq!(r.trace.len(), 11);
    assert!(r.trace[10] < r.trace[0], "{:?}", r.trace);
    let non_increasing = r.trace.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(non_increasing >= 8, "{:?}", r.trace);
    assert!(r.translation.norm() <= 20.0 + 1e-9);
    assert_eq!(r.skeleton, s.translated(r.translation));

    let zero = refine_translation(m, s, &pts, &RefineConfig { steps: 0, ..Default::default() }).unwrap();
    assert_eq!(zero.translation, Vec3::zero());
    assert_eq!(zero.skeleton, *s);

    let far = sphere_interior(20.0, vec3(0.0, 0.0, 1000.0), 256, 9);
    let flat = refine_translation(m, s, &far, &RefineConfig::default()).unwrap();
    assert_eq!(flat.translation, Vec3::zero());
    assert!(flat.trace.iter().all(|&l| l == 0.0));
}

fn box_mesh(lo: Vec3, hi: Vec3) -> TriMesh {
    let size = hi - lo;
    ObjectShape::axis_box([size.x, size.y, size.z], (lo + hi) * 0.5).to_mesh(0.25).unwrap()
}

fn cube(lo: Vec3, edge: f64) -> TriMesh {
    // eight corners, twelve outward triangles
    let v: Vec<Vec3> = (0..8)
        .map(|i| lo + vec3((i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2 & 1) as f64) * edge)
        .collect();
    let t = vec![
        [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
        [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
    ];
    TriMesh::new(v, t)
}

#[test]
fn voxel_volume_reference_cases() {
    let a = cube(Vec3::zero(), 10.0);
    assert!(a.signed_volume() > 0.0);
    let big = box_mesh(vec3(-20.0, -20.0, -20.0), vec3(30.0, 30.0, 30.0));
    let p = interpenetration_volume(&a, &big).unwrap();
    assert_eq!(p.voxels, 1000);
    assert_eq!(p.volume_cm3, 1.0);
    assert!(p.contact);
    let far = cube(vec3(50.0, 0.0, 0.0), 10.0);
    assert_eq!(
        interpenetration_volume(&a, &far).unwrap(),
        Penetration { volume_cm3: 0.0, voxels: 0, contact: false }
    );
    // sharing a face: no overlap, but in contact
    let next = cube(vec3(10.0, 0.0, 0.0), 10.0);
    let touch = interpenetration_volume(&a, &next).unwrap();
    assert_eq!(touch.voxels, 0);
    assert!(touch.contact);
    let open = TriMesh::new(a.vertices.clone(), a.triangles[1..].to_vec());
    assert!(matches!(interpenetration_volume(&open, &big), Err(Error::NonWatertight(_))));
}

#[test]
fn capsule_sphere_overlap_matches_the_analytic_volume() {
    let (r, big_r) = (8.0, 15.0);
    let c = vec3(0.3, -0.2, 0.45);
    let cap = Capsule::new(c - vec3(0.0, 0.0, 40.0), c + vec3(0.0, 0.0, 40.0), r);
    let (lo, hi) = cap.bounds();
    let g = GridSpec::with_cell(lo - vec3(1.0, 1.0, 1.0), hi + vec3(1.0, 1.0, 1.0), 0.25);
    let cap_mesh = marching_cubes(pointwise(|p: &Vec3| 0.5 - cap.sdf(p)), &g).unwrap();
    let sphere = ObjectShape::sphere(big_r, c + vec3(0.1, 0.0, 0.0) * 0.0).to_mesh(0.25).unwrap();
    // ball ∩ infinite cylinder through its center
    let exact = 4.0 / 3.0 * std::f64::consts::PI * (big_r.powi(3) - (big_r * big_r - r * r).powf(1.5)) / 1000.0;
    let v = interpenetration_volume(&cap_mesh, &sphere).unwrap().volume_cm3;
    assert!((v / exact - 1.0).abs() < 0.03, "{v} vs {exact}");
}

fn angles_with_margin(seed: u64) -> crate::canonicalization::AngleSet {
    AngleRanges::default().scaled(0.8).sample(&mut rng(seed))
}

#[test]
fn angle_losses_reference_cases() {
    let lengths = BoneLengths::reference();
    let a = angles_with_margin(10);
    let gt = pose_from_angles(&lengths, &a).unwrap();
    let zero = angle_losses(&gt, &gt).unwrap();
    assert_eq!(zero, AngleLosses { flexion: 0.0, abduction: 0.0, spread: 0.0, plane: 0.0 });
    let moved = gt.transformed(&random_motion(3));
    let l = angle_losses(&moved, &gt).unwrap();
    for v in [l.flexion, l.abduction, l.spread, l.plane] {
        assert!(v < 1e-9, "{l:?}");
    }
    let mut b = a;
    for level in 1..=3 {
        b.flexion[tree::bone(1, level) - 5] += 0.1;
    }
    let pred = pose_from_angles(&lengths, &b).unwrap();
    assert_eq!(canonical_angles_of(&pred).unwrap().max_abs_diff(&b) < 1e-6, true);
    let l = angle_losses(&pred, &gt).unwrap();
    assert!((l.flexion - 0.1 * 3.0 / 15.0).abs() < 1e-6, "{l:?}");
    assert!(l.abduction < 1e-6 && l.spread < 1e-6 && l.plane < 1e-6);
}

#[test]
fn bone_length_loss_reference_cases() {
    let s = random_hand(4);
    assert_eq!(bone_length_loss(&s, &s), 0.0);
    let mean_len = s.bone_lengths().0.iter().sum::<f64>() / 20.0;
    let l = bone_length_loss(&s.scaled(1.1), &s);
    assert!((l - 0.1 * mean_len).abs() < 1e-9);
}

#[test]
fn angle_loss_gradient_matches_differences() {
    use crate::diffcore::{check_gradient, record, DEFAULT_STEP};
    let gt = pose_from_angles(&BoneLengths::reference(), &angles_with_margin(11)).unwrap();
    let target = canonical_angles_of(&gt).unwrap();
    let pred = pose_from_angles(&BoneLengths::reference(), &angles_with_margin(12)).unwrap();
    let x = pred.to_flat();
    let rec = record(&x, |v| {
        let j = std::array::from_fn(|i| Vec3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]));
        let l = angle_losses_generic(&j, &target).unwrap();
        vec![l.flexion + l.abduction + l.spread + l.plane]
    });
    let analytic = rec.backward(&[1.0]).unwrap();
    let r = check_gradient(
        |p| {
            let j = std::array::from_fn(|i| Vec3::new(p[3 * i], p[3 * i + 1], p[3 * i + 2]));
            let l = angle_losses_generic(&j, &target).unwrap();
            l.flexion + l.abduction + l.spread + l.plane
        },
        analytic,
        &x,
        DEFAULT_STEP,
    );
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    let _: f64 = rng(0).random();
}
