use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use halo_core::canonicalization::{self as canon, canonical_angles_of, pose_from_angles, AngleRanges, AngleSet};
use halo_core::geometry::{vec3, Vec3};
use halo_core::grasp::{
    check_interpenetration_gradient, interpenetration_volume, refine_translation, sample_object_interior,
    ObjectShape, RefineConfig, DEFAULT_INTERIOR_POINTS,
};
use halo_core::occupancy::{load_checkpoint, save_checkpoint, HandOccupancyModel, Mode, OccupancyConfig};
use halo_core::skeleton::{read_skeleton, write_skeleton_json, BoneLengths, Handedness, Skeleton};
use halo_core::surface::{
    chamfer_l1, extract_hand_mesh, marching_cubes, noise_sweep as sweep, normal_consistency, part_color, pointwise,
    vertex_parts, write_obj, GridSpec, TriMesh, DEFAULT_MARGIN, DEFAULT_RESOLUTION,
};
use halo_core::training::corpus::{generate_corpus, read_corpus, write_corpus};
use halo_core::training::{
    generate_hands, split_index, train as fit, uniform_in_box, validation_iou, CapsuleHand, CorpusSpec, TrainConfig,
    TrainSample, ValSample,
};

use crate::config::{echo_beside, echo_into, overlay, read_input, require, to_json, write_output, Context};
use crate::Failure;

type Run = Result<(), Failure>;

fn load_skeleton(path: &Path) -> Result<Skeleton, Failure> {
    require(path)?;
    Ok(read_skeleton(path)?)
}

fn load_model(path: &Path) -> Result<HandOccupancyModel, Failure> {
    require(path)?;
    Ok(load_checkpoint(path)?.0)
}

fn parse_mode(s: &str) -> Result<Mode, Failure> {
    Mode::parse(s).ok_or_else(|| Failure::new(2, format!("unknown mode {s:?}")))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mesh in the skeleton's original frame.
fn to_caller_frame(mesh: TriMesh, s: &Skeleton) -> TriMesh {
    match s.handedness() {
        Handedness::Right => mesh,
        Handedness::Left => mesh.mirrored_x(),
    }
}

/// Exact capsule-hand surface on the same grid as model reconstructions.
fn oracle_mesh(hand: &CapsuleHand, g: &GridSpec) -> Result<TriMesh, Failure> {
    Ok(marching_cubes(pointwise(|p: &Vec3| 0.5 - 0.1 * hand.sdf(p)), g)?)
}

// ---------------------------------------------------------------- canonicalize

#[derive(Args)]
pub struct CanonicalizeArgs {
    /// Skeleton file (JSON or CSV, 21 joints in mm).
    #[arg(long)]
    skeleton: PathBuf,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CanonicalOutput {
    handedness: Handedness,
    bone_lengths: Vec<f64>,
    angles: AngleSet,
    /// Global alignment, posed to canonical.
    palm: [[f64; 4]; 4],
    /// Per bone, posed to canonical.
    inv: Vec<[[f64; 4]; 4]>,
    /// Per bone, canonical to posed.
    fwd: Vec<[[f64; 4]; 4]>,
    canonical_joints: Vec<[f64; 3]>,
}

pub fn canonicalize(a: &CanonicalizeArgs) -> Run {
    let s = load_skeleton(&a.skeleton)?;
    let c = canonicalize_skeleton(&s)?;
    let text = to_json(&c);
    match &a.out {
        Some(p) => write_output(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn canonicalize_skeleton(s: &Skeleton) -> Result<CanonicalOutput, Failure> {
    let c = canon::canonicalize(s).map_err(halo_core::Error::from)?;
    Ok(CanonicalOutput {
        handedness: s.handedness(),
        bone_lengths: c.lengths.to_vec(),
        angles: c.angles,
        palm: c.palm.to_homogeneous(),
        inv: c.inv.iter().map(|t| t.to_homogeneous()).collect(),
        fwd: c.inv.iter().map(|t| t.inverse().to_homogeneous()).collect(),
        canonical_joints: c.canonical_joints.iter().map(Vec3::to_array).collect(),
    })
}

// ---------------------------------------------------------------- surface

#[derive(Args)]
pub struct SurfaceArgs {
    #[arg(long)]
    skeleton: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output OBJ path.
    #[arg(long)]
    out: PathBuf,
    /// Grid samples per axis.
    #[arg(long)]
    resolution: Option<usize>,
    /// Padding around the joints (mm).
    #[arg(long)]
    margin: Option<f64>,
    /// Also report IoU against the capsule hand built on the skeleton.
    #[arg(long)]
    oracle: bool,
    /// Uniform points for the oracle IoU.
    #[arg(long)]
    oracle_points: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct SurfaceConfig {
    skeleton: PathBuf,
    checkpoint: PathBuf,
    resolution: usize,
    margin: f64,
    oracle: bool,
    oracle_points: usize,
    seed: u64,
}

pub fn surface(ctx: &Context, a: &SurfaceArgs) -> Run {
    let mut cfg = ctx.load(SurfaceConfig {
        skeleton: a.skeleton.clone(),
        checkpoint: a.checkpoint.clone(),
        resolution: DEFAULT_RESOLUTION,
        margin: DEFAULT_MARGIN,
        oracle: a.oracle,
        oracle_points: 100_000,
        seed: 0,
    })?;
    overlay!(cfg; resolution = a.resolution, margin = a.margin, oracle_points = a.oracle_points, seed = ctx.seed);
    cfg.oracle |= a.oracle;
    let s = load_skeleton(&cfg.skeleton)?;
    let model = load_model(&cfg.checkpoint)?;
    let g = GridSpec::around_skeleton(&s, cfg.margin, cfg.resolution);
    g.validate()?;
    let mesh = extract_hand_mesh(&model, &s, &g)?;
    let colors: Vec<[f64; 3]> = vertex_parts(&model, &s, &mesh)?.into_iter().map(part_color).collect();
    let triangles = mesh.triangles.len();
    write_obj(&to_caller_frame(mesh, &s), &a.out, Some(&colors))?;
    echo_beside(&a.out, &cfg)?;
    println!("triangles {triangles}");
    if cfg.oracle {
        let hand = CapsuleHand::with_default_radii(s.clone());
        let mut r = rng(cfg.seed);
        let pts: Vec<Vec3> = (0..cfg.oracle_points).map(|_| uniform_in_box(&g.lo, &g.hi, &mut r)).collect();
        let occ = model.query(&s, &pts)?;
        let pred: Vec<bool> = occ.iter().map(|&o| o > 0.5).collect();
        let gt: Vec<bool> = pts.iter().map(|p| hand.inside(p)).collect();
        println!("iou {:.6}", halo_core::surface::iou_of_labels(&pred, &gt));
    }
    Ok(())
}

// ---------------------------------------------------------------- gen-corpus

#[derive(Args)]
pub struct GenCorpusArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    poses: Option<usize>,
    #[arg(long)]
    shapes: Option<usize>,
    /// Per-finger length scale is drawn from 1 ± this.
    #[arg(long)]
    shape_variation: Option<f64>,
    #[arg(long)]
    uniform_points: Option<usize>,
    #[arg(long)]
    surface_points: Option<usize>,
    /// Near-surface noise (mm).
    #[arg(long)]
    noise_sigma: Option<f64>,
}

pub fn gen_corpus(ctx: &Context, a: &GenCorpusArgs) -> Run {
    let mut spec = ctx.load(CorpusSpec::default())?;
    overlay!(spec;
        poses = a.poses, shapes = a.shapes, shape_variation = a.shape_variation,
        uniform_points = a.uniform_points, surface_points = a.surface_points,
        noise_sigma = a.noise_sigma, seed = ctx.seed,
    );
    let samples = generate_corpus(&spec)?;
    // forward kinematics and canonicalization must agree on every sample
    let tol = 1e-9;
    let mut loose = spec.ranges.clone();
    for r in loose
        .flexion
        .iter_mut()
        .chain(&mut loose.abduction)
        .chain(&mut loose.spread)
        .chain(&mut loose.plane)
    {
        *r = (r.0 - tol, r.1 + tol);
    }
    for s in &samples {
        let angles = canonical_angles_of(&s.hand.skeleton).map_err(halo_core::Error::from)?;
        loose
            .check(&angles)
            .map_err(|e| Failure::new(1, format!("sample {}: {e}", s.name)))?;
    }
    write_corpus(&a.out, &spec, &samples)?;
    echo_into(&a.out, &spec)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    /// Output directory for the checkpoint, log and settings.
    #[arg(long)]
    out: PathBuf,
    /// Corpus directory; without it a corpus is generated in memory.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// halo_full, halo_local or nasa_baseline.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    points_per_hand: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Poses of the in-memory corpus.
    #[arg(long)]
    poses: Option<usize>,
    /// Shapes of the in-memory corpus.
    #[arg(long)]
    shapes: Option<usize>,
    /// Uniform validation points per held-out hand of the in-memory corpus.
    #[arg(long)]
    val_points: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TrainCmdConfig {
    train: TrainConfig,
    /// Used when no corpus directory is given.
    corpus: CorpusSpec,
    corpus_dir: Option<PathBuf>,
    val_points: usize,
    seed: u64,
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Run {
    let mut cfg = ctx.load(TrainCmdConfig {
        train: TrainConfig::desk(),
        corpus: CorpusSpec::default(),
        corpus_dir: None,
        val_points: 5000,
        seed: 0,
    })?;
    let mode = a.mode.as_deref().map(parse_mode).transpose()?;
    overlay!(cfg;
        train.model.mode = mode, train.steps = a.steps, train.batch_size = a.batch_size,
        train.points_per_hand = a.points_per_hand, train.learning_rate = a.learning_rate,
        train.eval_every = a.eval_every, corpus.poses = a.poses, corpus.shapes = a.shapes,
        val_points = a.val_points, seed = ctx.seed,
    );
    if a.corpus.is_some() {
        cfg.corpus_dir = a.corpus.clone();
    }
    cfg.train.seed = cfg.seed;
    cfg.corpus.seed = cfg.seed;

    let (train_set, val_set) = match &cfg.corpus_dir {
        Some(dir) => {
            require(&dir.join("manifest.json"))?;
            let (manifest, samples) = read_corpus(dir)?;
            let split = split_index(&manifest.spec).min(samples.len());
            let train_set: Vec<TrainSample> = samples[..split].iter().map(|s| TrainSample::new(s.hand.clone())).collect();
            let val: Vec<ValSample> = samples[split..]
                .iter()
                .map(|s| ValSample {
                    hand: s.hand.clone(),
                    points: s.uniform.clone(),
                })
                .collect();
            (train_set, val)
        }
        None => {
            let hands = generate_hands(&cfg.corpus)?;
            let split = split_index(&cfg.corpus);
            let val = hands[split..]
                .iter()
                .enumerate()
                .map(|(i, h)| ValSample::generate(h.clone(), cfg.val_points, cfg.seed ^ (0x5eed_0000 + i as u64)))
                .collect();
            (hands[..split].iter().cloned().map(TrainSample::new).collect(), val)
        }
    };
    let model = HandOccupancyModel::init(cfg.train.model.clone(), cfg.seed)?;
    eprintln!(
        "training {} on {} hands, validating on {}",
        cfg.train.model.mode.name(),
        train_set.len(),
        val_set.len()
    );
    let out = fit(model, &train_set, &val_set, &cfg.train, |e| {
        if let Some(iou) = e.val_iou {
            eprintln!("step {:>6}  loss {:.5}  held-out IoU {:.4}", e.step, e.total, iou);
        }
    })?;
    std::fs::create_dir_all(&a.out).map_err(|e| halo_core::Error::io(&a.out, e))?;
    let extra = serde_json::json!({
        "best_val_iou": out.log.best_val_iou,
        "best_step": out.log.best_step,
        "seed": cfg.seed,
    });
    save_checkpoint(&out.model, &a.out.join("model.halo"), extra)?;
    write_output(&a.out.join("log.json"), &to_json(&out.log))?;
    echo_into(&a.out, &cfg)?;
    println!("best held-out IoU {:.4} at step {}", out.log.best_val_iou, out.log.best_step);
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    /// Corpus directory; its held-out split is evaluated.
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoints to evaluate; repeatable.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Mode to evaluate, or `all`.
    #[arg(long)]
    mode: Option<String>,
    /// Also evaluate the capsule oracle against itself.
    #[arg(long)]
    oracle: bool,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid samples per axis for mesh metrics.
    #[arg(long)]
    resolution: Option<usize>,
    /// Surface samples per mesh for Chamfer-L1 and normal consistency.
    #[arg(long)]
    chamfer_samples: Option<usize>,
    /// Held-out hands meshed for the surface metrics.
    #[arg(long)]
    mesh_samples: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct EvalConfig {
    corpus: PathBuf,
    checkpoints: Vec<PathBuf>,
    mode: String,
    oracle: bool,
    resolution: usize,
    chamfer_samples: usize,
    mesh_samples: usize,
    seed: u64,
}

struct Row {
    name: String,
    mode: String,
    iou: f64,
    chamfer: f64,
    normal: f64,
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Run {
    let mut cfg = ctx.load(EvalConfig {
        corpus: a.corpus.clone(),
        checkpoints: a.checkpoint.clone(),
        mode: "all".into(),
        oracle: a.oracle,
        resolution: 64,
        chamfer_samples: 10_000,
        mesh_samples: 5,
        seed: 0,
    })?;
    overlay!(cfg;
        mode = a.mode, resolution = a.resolution, chamfer_samples = a.chamfer_samples,
        mesh_samples = a.mesh_samples, seed = ctx.seed,
    );
    cfg.oracle |= a.oracle;
    let wanted = match cfg.mode.as_str() {
        "all" => None,
        m => Some(parse_mode(m)?),
    };
    if cfg.checkpoints.is_empty() && !cfg.oracle {
        return Err(Failure::new(2, "nothing to evaluate: pass --checkpoint or --oracle"));
    }
    require(&cfg.corpus.join("manifest.json"))?;
    let (manifest, samples) = read_corpus(&cfg.corpus)?;
    let held_out = &samples[split_index(&manifest.spec).min(samples.len())..];
    if held_out.is_empty() {
        return Err(Failure::new(2, "corpus has no held-out samples"));
    }
    let val: Vec<ValSample> = held_out
        .iter()
        .map(|s| ValSample {
            hand: s.hand.clone(),
            points: s.uniform.clone(),
        })
        .collect();
    let meshed = &held_out[..cfg.mesh_samples.min(held_out.len())];
    let grids: Vec<GridSpec> = meshed
        .iter()
        .map(|s| GridSpec::around_skeleton(&s.hand.skeleton, DEFAULT_MARGIN, cfg.resolution))
        .collect();
    let oracles = meshed
        .iter()
        .zip(&grids)
        .map(|(s, g)| oracle_mesh(&s.hand, g))
        .collect::<Result<Vec<_>, _>>()?;
    let surface_metrics = |meshes: &[TriMesh]| -> Result<(f64, f64), Failure> {
        let (mut c, mut n) = (0.0, 0.0);
        for (m, o) in meshes.iter().zip(&oracles) {
            c += chamfer_l1(m, o, cfg.chamfer_samples, cfg.seed)?;
            n += normal_consistency(m, o, cfg.chamfer_samples, cfg.seed)?;
        }
        let k = meshes.len().max(1) as f64;
        Ok((c / k, n / k))
    };

    let mut rows = Vec::new();
    if cfg.oracle {
        let mut inter = 0.0;
        for v in &val {
            let pred: Vec<bool> = v.points.points.iter().map(|p| v.hand.inside(p)).collect();
            let gt: Vec<bool> = v.points.labels.iter().map(|&l| l == 1).collect();
            inter += halo_core::surface::iou_of_labels(&pred, &gt);
        }
        let (chamfer, normal) = surface_metrics(&oracles)?;
        rows.push(Row {
            name: "oracle".into(),
            mode: "oracle".into(),
            iou: inter / val.len() as f64,
            chamfer,
            normal,
        });
    }
    for path in &cfg.checkpoints {
        let model = load_model(path)?;
        if let Some(m) = wanted {
            if model.mode() != m {
                return Err(Failure::new(
                    3,
                    format!(
                        "{} holds a {} model, expected {}",
                        path.display(),
                        model.mode().name(),
                        m.name()
                    ),
                ));
            }
        }
        let iou = validation_iou(&model, &val)?;
        let meshes = meshed
            .iter()
            .zip(&grids)
            .map(|(s, g)| extract_hand_mesh(&model, &s.hand.skeleton, g))
            .collect::<Result<Vec<_>, _>>()?;
        let (chamfer, normal) = surface_metrics(&meshes)?;
        rows.push(Row {
            name: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            mode: model.mode().name().into(),
            iou,
            chamfer,
            normal,
        });
    }
    let mut csv = String::from("name,mode,iou,chamfer_l1_mm,normal_consistency\n");
    for r in &rows {
        csv += &format!("{},{},{:.6},{:.6},{:.6}\n", r.name, r.mode, r.iou, r.chamfer, r.normal);
    }
    match &a.out {
        Some(p) => {
            write_output(p, &csv)?;
            echo_beside(p, &cfg)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- refine

#[derive(Args)]
pub struct RefineArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    skeleton: PathBuf,
    /// Object JSON, e.g. `{"kind":"sphere","radius_mm":30,"center":[0,0,0]}`.
    #[arg(long)]
    object: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    /// Translation per step (mm).
    #[arg(long)]
    step_mm: Option<f64>,
    /// Object interior points.
    #[arg(long)]
    points: Option<usize>,
    /// Also report 1 mm voxel interpenetration volumes before and after.
    #[arg(long)]
    volume: bool,
    /// Grid samples per axis for the hand mesh behind the volume.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct RefineCmdConfig {
    checkpoint: PathBuf,
    skeleton: PathBuf,
    object: PathBuf,
    refine: RefineConfig,
    interior_points: usize,
    volume: bool,
    resolution: usize,
    seed: u64,
}

#[derive(Serialize)]
struct RefineReport {
    /// In the skeleton's original frame (mm).
    translation: [f64; 3],
    trace: Vec<f64>,
    interior_acceptance: f64,
    volume_before_cm3: Option<f64>,
    volume_after_cm3: Option<f64>,
    contact_before: Option<bool>,
    contact_after: Option<bool>,
}

fn mirror_point(p: &Vec3) -> Vec3 {
    vec3(-p.x, p.y, p.z)
}

pub fn refine(ctx: &Context, a: &RefineArgs) -> Run {
    let mut cfg = ctx.load(RefineCmdConfig {
        checkpoint: a.checkpoint.clone(),
        skeleton: a.skeleton.clone(),
        object: a.object.clone(),
        refine: RefineConfig::default(),
        interior_points: DEFAULT_INTERIOR_POINTS,
        volume: a.volume,
        resolution: DEFAULT_RESOLUTION,
        seed: 0,
    })?;
    overlay!(cfg;
        refine.steps = a.steps, refine.step_mm = a.step_mm, interior_points = a.points,
        resolution = a.resolution, seed = ctx.seed,
    );
    cfg.volume |= a.volume;
    let model = load_model(&cfg.checkpoint)?;
    let s = load_skeleton(&cfg.skeleton)?;
    let text = read_input(&cfg.object)?;
    let object: ObjectShape =
        serde_json::from_str(&text).map_err(|e| halo_core::Error::parse(&cfg.object, e.to_string()))?;
    object.validate()?;
    // the object is given in the caller's frame; the model works in the
    // right-hand one
    let left = s.handedness() == Handedness::Left;
    let samples = sample_object_interior(&object, cfg.interior_points, &mut rng(cfg.seed))?;
    let interior: Vec<Vec3> = if left {
        samples.points.iter().map(mirror_point).collect()
    } else {
        samples.points.clone()
    };
    let r = refine_translation(&model, &s, &interior, &cfg.refine)?;

    let (mut vb, mut va, mut cb, mut ca) = (None, None, None, None);
    if cfg.volume {
        let obj_mesh = object.to_mesh(0.5)?;
        let hand_mesh = |sk: &Skeleton| -> Result<TriMesh, Failure> {
            let g = GridSpec::around_skeleton(sk, DEFAULT_MARGIN, cfg.resolution);
            Ok(to_caller_frame(extract_hand_mesh(&model, sk, &g)?, sk))
        };
        let before = interpenetration_volume(&hand_mesh(&s)?, &obj_mesh)?;
        let after = interpenetration_volume(&hand_mesh(&r.skeleton)?, &obj_mesh)?;
        vb = Some(before.volume_cm3);
        va = Some(after.volume_cm3);
        cb = Some(before.contact);
        ca = Some(after.contact);
    }
    let t = if left { mirror_point(&r.translation) } else { r.translation };
    let report = RefineReport {
        translation: t.to_array(),
        trace: r.trace.clone(),
        interior_acceptance: samples.acceptance,
        volume_before_cm3: vb,
        volume_after_cm3: va,
        contact_before: cb,
        contact_after: ca,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| halo_core::Error::io(&a.out, e))?;
    write_skeleton_json(&a.out.join("skeleton.json"), &r.skeleton)?;
    write_output(&a.out.join("refine.json"), &to_json(&report))?;
    echo_into(&a.out, &cfg)?;
    let trace: Vec<String> = r.trace.iter().map(|l| format!("{l:.4}")).collect();
    println!("loss {}", trace.join(" "));
    println!("translation {:.4} {:.4} {:.4}", t.x, t.y, t.z);
    if let (Some(b), Some(a)) = (vb, va) {
        println!("volume_cm3 {b:.3} -> {a:.3}");
    }
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args)]
pub struct GradcheckArgs {
    /// Checkpoint; a freshly initialized model when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Skeleton; a random pose when omitted.
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Mode of the initialized model.
    #[arg(long)]
    mode: Option<String>,
    /// Query points per check.
    #[arg(long)]
    points: Option<usize>,
    /// Central-difference step (mm).
    #[arg(long)]
    step: Option<f64>,
    /// Largest accepted relative error.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct GradcheckConfig {
    checkpoint: Option<PathBuf>,
    skeleton: Option<PathBuf>,
    mode: String,
    points: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
}

pub fn gradcheck(ctx: &Context, a: &GradcheckArgs) -> Run {
    let mut cfg = ctx.load(GradcheckConfig {
        checkpoint: a.checkpoint.clone(),
        skeleton: a.skeleton.clone(),
        mode: Mode::HaloFull.name().into(),
        points: 256,
        step: halo_core::diffcore::DEFAULT_STEP,
        tolerance: 1e-4,
        seed: 0,
    })?;
    overlay!(cfg; mode = a.mode, points = a.points, step = a.step, tolerance = a.tolerance, seed = ctx.seed);
    let mut r = rng(cfg.seed);
    let model = match &cfg.checkpoint {
        Some(p) => load_model(p)?,
        None => HandOccupancyModel::init(OccupancyConfig::with_mode(parse_mode(&cfg.mode)?), cfg.seed)?,
    };
    let s = match &cfg.skeleton {
        Some(p) => load_skeleton(p)?,
        None => pose_from_angles(&BoneLengths::reference(), &AngleRanges::default().scaled(0.8).sample(&mut r))?,
    };
    let (lo, hi) = s.bounds();
    let pad = vec3(10.0, 10.0, 10.0);
    let pts: Vec<Vec3> = (0..cfg.points).map(|_| uniform_in_box(&(lo - pad), &(hi + pad), &mut r)).collect();
    let occ = model.check_joint_gradient(&s, &pts, cfg.step)?;
    let ball = ObjectShape::sphere(30.0, (lo + hi) * 0.5);
    let interior = sample_object_interior(&ball, cfg.points, &mut r)?.points;
    let pen = check_interpenetration_gradient(&model, &s, &interior, cfg.step)?;
    println!("occupancy max_rel_error {:.3e} at coordinate {}", occ.max_rel_error, occ.worst_index);
    println!("interpenetration max_rel_error {:.3e} at coordinate {}", pen.max_rel_error, pen.worst_index);
    let worst = occ.max_rel_error.max(pen.max_rel_error);
    if !(worst <= cfg.tolerance) {
        return Err(Failure::new(
            1,
            format!("gradient check failed: relative error {worst:.3e} exceeds {:.1e}", cfg.tolerance),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- noise-sweep

#[derive(Args)]
pub struct NoiseSweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    skeleton: PathBuf,
    /// Noise amplitudes (mm), comma separated.
    #[arg(long, value_delimiter = ',')]
    amplitudes: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Uniform evaluation points.
    #[arg(long)]
    points: Option<usize>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct NoiseConfig {
    checkpoint: PathBuf,
    skeleton: PathBuf,
    amplitudes: Vec<f64>,
    trials: usize,
    points: usize,
    seed: u64,
}

pub fn noise_sweep(ctx: &Context, a: &NoiseSweepArgs) -> Run {
    let mut cfg = ctx.load(NoiseConfig {
        checkpoint: a.checkpoint.clone(),
        skeleton: a.skeleton.clone(),
        amplitudes: vec![0.0, 1.0, 2.0, 5.0],
        trials: 20,
        points: 20_000,
        seed: 0,
    })?;
    overlay!(cfg; amplitudes = a.amplitudes, trials = a.trials, points = a.points, seed = ctx.seed);
    let model = load_model(&cfg.checkpoint)?;
    let s = load_skeleton(&cfg.skeleton)?;
    let rows = sweep(&model, &s, &cfg.amplitudes, cfg.trials, cfg.points, cfg.seed)?;
    let mut csv = String::from("amplitude_mm,mean_iou,min_iou,max_iou\n");
    for r in &rows {
        let min = r.ious.iter().copied().fold(f64::INFINITY, f64::min);
        let max = r.ious.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        csv += &format!("{},{:.6},{:.6},{:.6}\n", r.amplitude_mm, r.mean_iou, min, max);
    }
    match &a.out {
        Some(p) => {
            write_output(p, &csv)?;
            echo_beside(p, &cfg)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
