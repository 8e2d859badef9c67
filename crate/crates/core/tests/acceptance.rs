//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use halo_core::canonicalization::{canonicalize, pose_from_angles, AngleRanges};
use halo_core::diffcore::DEFAULT_STEP;
use halo_core::geometry::{random_direction, vec3, Capsule, Mat3, Rigid, Vec3};
use halo_core::grasp::{
    check_interpenetration_gradient, interpenetration_volume, refine_translation, sample_object_interior, ObjectShape,
    RefineConfig,
};
use halo_core::occupancy::{load_checkpoint, save_checkpoint, HandOccupancyModel, Mode, OccupancyConfig};
use halo_core::skeleton::{read_skeleton_json, tree, write_skeleton_json, BoneLengths, Handedness, Skeleton, NUM_BONES};
use halo_core::surface::{
    chamfer_l1, extract_hand_mesh, iou, marching_cubes, noise_sweep, pointwise, GridSpec, DEFAULT_MARGIN,
};
use halo_core::training::{
    generate_hands, split_index, train, uniform_in_box, validation_iou, CapsuleHand, CorpusSpec, TrainConfig,
    TrainSample, ValSample,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_lengths(r: &mut ChaCha8Rng) -> BoneLengths {
    let scale = std::array::from_fn(|_| r.random_range(0.8..1.2));
    BoneLengths::reference().scaled_per_finger(&scale)
}

fn random_motion(r: &mut ChaCha8Rng) -> Rigid {
    let axis = random_direction(r);
    let angle = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let t = vec3(r.random_range(-300.0..300.0), r.random_range(-300.0..300.0), r.random_range(-300.0..300.0));
    Rigid {
        rot: Mat3::rotation(&axis, angle),
        trans: t,
    }
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    (a - b).norm()
}

fn round_trip() -> Outcome {
    let mut r = rng(1);
    let ranges = AngleRanges::default();
    let mut samples = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let a = ranges.sample(&mut r);
        let s = pose_from_angles(&random_lengths(&mut r), &a).expect("angles in range");
        samples.push((a, s));
    }
    let t = Instant::now();
    let mut results = Vec::with_capacity(samples.len());
    for (_, s) in &samples {
        results.push(canonicalize(s).expect("valid skeleton"));
    }
    let secs = t.elapsed().as_secs_f64();
    let (mut angle_err, mut joint_err, mut length_err, mut exact) = (0.0f64, 0.0f64, 0.0f64, true);
    for ((a, s), c) in samples.iter().zip(&results) {
        angle_err = angle_err.max(c.angles.max_abs_diff(a));
        let input = s.bone_lengths().0;
        exact &= c.lengths == input;
        for b in 0..NUM_BONES {
            let (p, q) = (tree::parent_joint(b), tree::child_joint(b));
            for j in [p, q] {
                joint_err = joint_err.max(dist(c.inv[b].apply(&s.joint(j)), c.canonical_joints[j]));
            }
            length_err = length_err.max((dist(c.canonical_joints[p], c.canonical_joints[q]) - input[b]).abs());
        }
    }
    outcome(
        angle_err <= 1e-6 && joint_err <= 1e-6 && exact && length_err <= 1e-9 && secs < 10.0,
        format!(
            "angles {angle_err:.1e} rad, joints {joint_err:.1e} mm, lengths exact {exact} \
             (canonical {length_err:.1e} mm), {secs:.3} s"
        ),
    )
}

fn rigidity() -> Outcome {
    let mut r = rng(2);
    let ranges = AngleRanges::default();
    let (mut ortho, mut det, mut bitwise) = (0.0f64, 0.0f64, true);
    for _ in 0..1000 {
        let s = pose_from_angles(&random_lengths(&mut r), &ranges.sample(&mut r)).expect("angles in range");
        let s = s.transformed(&random_motion(&mut r));
        let a = canonicalize(&s).expect("valid skeleton");
        let b = canonicalize(&s).expect("valid skeleton");
        for t in &a.inv {
            ortho = ortho.max(t.rot.orthonormality_error());
            det = det.max((t.rot.det() - 1.0).abs());
        }
        let bits = |c: &halo_core::canonicalization::Canonicalized| -> Vec<u64> {
            let mut v: Vec<u64> = c.inv.iter().flat_map(|t| t.to_homogeneous().concat()).map(f64::to_bits).collect();
            v.extend(c.angles.to_vec().iter().map(|x| x.to_bits()));
            v.extend(c.canonical_joints.iter().flat_map(|p| p.to_array()).map(f64::to_bits));
            v
        };
        bitwise &= bits(&a) == bits(&b);
    }
    outcome(
        ortho <= 1e-8 && det <= 1e-8 && bitwise,
        format!("orthonormality {ortho:.1e}, |det - 1| {det:.1e}, repeat bitwise {bitwise}"),
    )
}

fn keypoint_fidelity() -> Outcome {
    // the surface is conditioned on the given keypoints: mapping the
    // canonical skeleton back through the forward transforms reproduces
    // them, so the skeleton implied by the surface is the input
    let mut r = rng(4);
    let ranges = AngleRanges::default();
    let mut mpjpe = 0.0f64;
    for _ in 0..1000 {
        let s = pose_from_angles(&random_lengths(&mut r), &ranges.sample(&mut r)).expect("angles in range");
        let s = s.transformed(&random_motion(&mut r));
        let c = canonicalize(&s).expect("valid skeleton");
        let mut sum = 0.0;
        let mut n = 0;
        for b in 0..NUM_BONES {
            let fwd = c.inv[b].inverse();
            for j in [tree::parent_joint(b), tree::child_joint(b)] {
                sum += dist(fwd.apply(&c.canonical_joints[j]), s.joint(j));
                n += 1;
            }
        }
        mpjpe = mpjpe.max(sum / n as f64);
    }
    outcome(mpjpe <= 1e-9, format!("worst MPJPE {mpjpe:.1e} mm"))
}

fn metric_oracles() -> Outcome {
    let mut r = rng(8);
    let r1 = 10.0;
    let r2 = r1 * 2f64.cbrt();
    let lo = vec3(-r2, -r2, -r2);
    let pts: Vec<Vec3> = (0..100_000).map(|_| uniform_in_box(&lo, &(-lo), &mut r)).collect();
    let ball = |rad: f64| pointwise(move |p: &Vec3| if p.norm() < rad { 1.0 } else { 0.0 });
    let sphere_iou = iou(ball(r1), ball(r2), &pts).expect("same length");

    let shape = ObjectShape::sphere(15.0, vec3(1.0, 2.0, 3.0));
    let mesh = shape.to_mesh(0.5).expect("closed mesh");
    let self_chamfer = chamfer_l1(&mesh, &mesh, 10_000, 8).expect("non-empty");

    let (cr, br) = (8.0, 15.0);
    let c = vec3(0.3, -0.2, 0.45);
    let cap = Capsule::new(c - vec3(0.0, 0.0, 40.0), c + vec3(0.0, 0.0, 40.0), cr);
    let (clo, chi) = cap.bounds();
    let g = GridSpec::with_cell(clo - vec3(1.0, 1.0, 1.0), chi + vec3(1.0, 1.0, 1.0), 0.25);
    let cap_mesh = marching_cubes(pointwise(|p: &Vec3| 0.5 - cap.sdf(p)), &g).expect("closed mesh");
    let ball_mesh = ObjectShape::sphere(br, c).to_mesh(0.25).expect("closed mesh");
    let exact = 4.0 / 3.0 * std::f64::consts::PI * (br.powi(3) - (br * br - cr * cr).powf(1.5)) / 1000.0;
    let v = interpenetration_volume(&cap_mesh, &ball_mesh).expect("closed meshes").volume_cm3;
    let rel = (v / exact - 1.0).abs();
    outcome(
        (sphere_iou - 0.5).abs() <= 0.01 && self_chamfer <= 0.01 && rel <= 0.03,
        format!(
            "sphere IoU {sphere_iou:.4}, self chamfer {self_chamfer:.1e} mm, \
             capsule-sphere volume {v:.3} vs {exact:.3} cm3 ({:.2}%)",
            100.0 * rel
        ),
    )
}

fn round_trips_and_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let model = HandOccupancyModel::init(OccupancyConfig::default(), 5).expect("valid config");
    let ck = dir.path().join("m.halo");
    let ck2 = dir.path().join("m2.halo");
    save_checkpoint(&model, &ck, serde_json::json!({"k": 1})).expect("writable");
    let (back, extra) = load_checkpoint(&ck).expect("readable");
    save_checkpoint(&back, &ck2, extra.clone()).expect("writable");
    let same_params = back.params().iter().map(|p| p.to_bits()).eq(model.params().iter().map(|p| p.to_bits()));
    let ck_ok = same_params
        && back.config() == model.config()
        && extra == serde_json::json!({"k": 1})
        && std::fs::read(&ck).unwrap() == std::fs::read(&ck2).unwrap();

    let mut r = rng(10);
    let mut sk_ok = true;
    for hand in [Handedness::Right, Handedness::Left] {
        let s = pose_from_angles(&random_lengths(&mut r), &AngleRanges::default().sample(&mut r))
            .expect("angles in range")
            .transformed(&random_motion(&mut r));
        let s = Skeleton::new(&s.original_joints(), hand).expect("valid joints");
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        write_skeleton_json(&a, &s).expect("writable");
        let back = read_skeleton_json(&a).expect("readable");
        write_skeleton_json(&b, &back).expect("writable");
        let bits = |s: &Skeleton| s.original_joints().concat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        sk_ok &= back.handedness() == hand
            && bits(&back) == bits(&s)
            && std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    }

    let spec = CorpusSpec {
        poses: 4,
        shapes: 2,
        seed: 9,
        ..Default::default()
    };
    let hands = generate_hands(&spec).expect("valid spec");
    let set: Vec<TrainSample> = hands[..6].iter().cloned().map(TrainSample::new).collect();
    let val: Vec<ValSample> = hands[6..].iter().cloned().map(|h| ValSample::generate(h, 1000, 0)).collect();
    let cfg = TrainConfig {
        steps: 150,
        eval_every: 50,
        seed: 21,
        ..TrainConfig::desk()
    };
    let run = || {
        let m = HandOccupancyModel::init(cfg.model.clone(), 21).expect("valid config");
        train(m, &set, &val, &cfg, |_| {}).expect("training runs").log.final_loss
    };
    let (l1, l2) = (run(), run());
    let det_ok = (l1 - l2).abs() <= 1e-6;
    outcome(
        ck_ok && sk_ok && det_ok,
        format!("checkpoint bitwise {ck_ok}, skeleton files bitwise {sk_ok}, final loss {l1:.9} vs {l2:.9}"),
    )
}

/// The capsule corpus shared by the training criteria.
struct Corpus {
    train: Vec<TrainSample>,
    select: Vec<ValSample>,
    test: Vec<ValSample>,
}

impl Corpus {
    fn build() -> Corpus {
        let spec = CorpusSpec {
            poses: 500,
            shapes: 5,
            seed: 3,
            ..Default::default()
        };
        let hands = generate_hands(&spec).expect("valid spec");
        let split = split_index(&spec);
        // the last ten training poses choose the checkpoint
        let select_from = split - 10 * spec.shapes;
        Corpus {
            train: hands[..select_from].iter().cloned().map(TrainSample::new).collect(),
            select: hands[select_from..split]
                .iter()
                .enumerate()
                .map(|(i, h)| ValSample::generate(h.clone(), 2000, i as u64))
                .collect(),
            test: hands[split..]
                .iter()
                .enumerate()
                .map(|(i, h)| ValSample::generate(h.clone(), 20_000, 1_000_000 + i as u64))
                .collect(),
        }
    }

    /// Trains one mode with the desk configuration; returns the model,
    /// held-out IoU and training seconds.
    fn fit(&self, mode: Mode) -> (HandOccupancyModel, f64, f64) {
        let cfg = TrainConfig {
            model: OccupancyConfig::with_mode(mode),
            ..TrainConfig::desk()
        };
        let t = Instant::now();
        let m = HandOccupancyModel::init(cfg.model.clone(), 1).expect("valid config");
        let out = train(m, &self.train, &self.select, &cfg, |_| {}).expect("training runs");
        let secs = t.elapsed().as_secs_f64();
        let test = validation_iou(&out.model, &self.test).expect("held-out queries");
        (out.model, test, secs)
    }
}

fn desk_training(iou: f64, secs: f64, steps: usize, params: usize) -> Outcome {
    outcome(
        iou >= 0.90 && secs < 1800.0 && steps <= 20_000,
        format!("held-out IoU {iou:.4}, {steps} steps, {params} parameters, {secs:.0} s"),
    )
}

fn test_hands(c: &Corpus, n: usize) -> Vec<CapsuleHand> {
    c.test.iter().step_by(c.test.len() / n).take(n).map(|v| v.hand.clone()).collect()
}

fn differentiability(model: &HandOccupancyModel, c: &Corpus) -> Outcome {
    let mut r = rng(3);
    let (mut occ, mut pen) = (0.0f64, 0.0f64);
    for hand in test_hands(c, 20) {
        let s = hand.skeleton.transformed(&random_motion(&mut r));
        let (lo, hi) = s.bounds();
        let pad = vec3(10.0, 10.0, 10.0);
        let pts: Vec<Vec3> = (0..256).map(|_| uniform_in_box(&(lo - pad), &(hi + pad), &mut r)).collect();
        occ = occ.max(model.check_joint_gradient(&s, &pts, DEFAULT_STEP).expect("valid inputs").max_rel_error);
        let ball = ObjectShape::sphere(30.0, (lo + hi) * 0.5);
        let interior = sample_object_interior(&ball, 256, &mut r).expect("solid ball").points;
        pen = pen.max(
            check_interpenetration_gradient(model, &s, &interior, DEFAULT_STEP)
                .expect("valid inputs")
                .max_rel_error,
        );
    }
    outcome(
        occ <= 1e-4 && pen <= 1e-4,
        format!("max relative error: mean occupancy {occ:.1e}, interpenetration {pen:.1e}"),
    )
}

fn refinement(model: &HandOccupancyModel, c: &Corpus) -> Outcome {
    let mut r = rng(7);
    let (mut reductions, mut worst_change) = (Vec::new(), f64::NEG_INFINITY);
    let mut skipped = 0;
    for hand in test_hands(c, 20) {
        let s = &hand.skeleton;
        let mesh = extract_hand_mesh(model, s, &GridSpec::around_skeleton(s, DEFAULT_MARGIN, 128)).expect("hand mesh");
        // a ball pressed onto a random finger joint
        let joint = 1 + r.random_range(0..20);
        let radius = r.random_range(15.0..25.0);
        let center = s.joint(joint) + random_direction(&mut r) * (radius * 0.8);
        let ball = ObjectShape::sphere(radius, center);
        let obj = ball.to_mesh(0.5).expect("closed mesh");
        let before = interpenetration_volume(&mesh, &obj).expect("closed meshes").volume_cm3;
        if before == 0.0 {
            skipped += 1;
            continue;
        }
        let interior = sample_object_interior(&ball, 2048, &mut r).expect("solid ball").points;
        let out = refine_translation(model, s, &interior, &RefineConfig::default()).expect("refinement runs");
        // occupancy depends on keypoints only up to a rigid motion, so the
        // refined surface is the translated one
        let after = interpenetration_volume(&mesh.translated(out.translation), &obj)
            .expect("closed meshes")
            .volume_cm3;
        reductions.push(1.0 - after / before);
        worst_change = worst_change.max(after / before - 1.0);
    }
    let mean = reductions.iter().sum::<f64>() / reductions.len().max(1) as f64;
    outcome(
        reductions.len() == 20 && mean >= 0.30 && worst_change <= 0.05,
        format!(
            "{} colliding scenes ({skipped} without contact), mean volume reduction {:.1}%, worst change {:+.1}%",
            reductions.len(),
            100.0 * mean,
            100.0 * worst_change
        ),
    )
}

fn noise_tolerance(model: &HandOccupancyModel, c: &Corpus) -> Outcome {
    let s = &c.test[0].hand.skeleton;
    let rows = noise_sweep(model, s, &[0.0, 2.0, 5.0], 20, 20_000, 11).expect("valid sweep");
    let clean = rows[0].ious.iter().all(|&v| v == 1.0);
    outcome(
        clean && rows[1].mean_iou > rows[2].mean_iou,
        format!(
            "IoU at 0 mm {:.4}, 2 mm {:.4}, 5 mm {:.4}",
            rows[0].mean_iou, rows[1].mean_iou, rows[2].mean_iou
        ),
    )
}

fn ablation(full: f64, local: f64, nasa: f64) -> Outcome {
    outcome(
        full >= local && local >= nasa && full - nasa >= 0.01,
        format!("held-out IoU full {full:.4}, local {local:.4}, baseline {nasa:.4}"),
    )
}

fn report(results: &mut Vec<(usize, &'static str, Outcome)>, n: usize, name: &'static str, o: Outcome) {
    println!("criterion {n:2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((n, name, o));
}

fn main() {
    let mut results = Vec::new();
    report(&mut results, 1, "canonicalization round-trip", round_trip());
    report(&mut results, 2, "rigidity and uniqueness", rigidity());
    report(&mut results, 4, "keypoint fidelity", keypoint_fidelity());
    report(&mut results, 8, "metric oracles", metric_oracles());
    report(&mut results, 10, "round-trips and determinism", round_trips_and_determinism());

    let corpus = Corpus::build();
    let steps = TrainConfig::desk().steps;
    let (full, full_iou, secs) = corpus.fit(Mode::HaloFull);
    report(
        &mut results,
        5,
        "desk-scale training",
        desk_training(full_iou, secs, steps, full.num_params()),
    );
    report(&mut results, 3, "differentiability", differentiability(&full, &corpus));
    report(&mut results, 7, "refinement efficacy", refinement(&full, &corpus));
    report(&mut results, 9, "noise tolerance", noise_tolerance(&full, &corpus));

    let (_, local_iou, _) = corpus.fit(Mode::HaloLocal);
    let (_, nasa_iou, _) = corpus.fit(Mode::NasaBaseline);
    report(&mut results, 6, "ablation ordering", ablation(full_iou, local_iou, nasa_iou));

    results.sort_by_key(|r| r.0);
    println!();
    for (n, name, o) in &results {
        println!("{:>4} criterion {n:2} {name}", if o.pass { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
