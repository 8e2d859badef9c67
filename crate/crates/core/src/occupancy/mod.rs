//! Part-based neural occupancy of a posed hand.
//!
//! Sixteen parts (palm plus the fifteen finger bones) each own a small
//! residual network evaluated in the part's canonical frame. A query point
//! `x` is mapped by every part transform, each part produces a logit, and the
//! hand occupancy is the logistic of the maximum logit. Parts are conditioned
//! on a pose code (a per-part linear projection of the root joint as seen by
//! all sixteen part frames) and, depending on [`Mode`], on bone lengths.

mod backprop;
mod checkpoint;
mod gradient;
pub(crate) mod kernel;
mod layout;

pub use backprop::{LossKind, LossOptions, SampleBatch, SampleLoss};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint, CHECKPOINT_VERSION};
pub use gradient::{ActivationPattern, OccupancyGradient};

use serde::{Deserialize, Serialize};

use std::sync::OnceLock;

use crate::canonicalization::{canonical_skeleton, canonicalize_generic, CanonError, CanonicalPose};
use crate::diffcore::{logistic_f64, Scalar};
use crate::geometry::{Rigid, Vec3};
use crate::par;
use crate::skeleton::{tree, BoneLengths, Skeleton, NUM_FINGERS, NUM_JOINTS};
use crate::Error;

use kernel::{Activation, Real};
use layout::Layout;

pub const NUM_PARTS: usize = 16;

/// Skinning-loss target per unit skinning weight: a surface point fully
/// owned by a part should sit on that part's 0.5 level set.
pub const SKIN_TARGET: f64 = 0.5;
/// Rows per evaluation chunk.
const CHUNK: usize = 2048;

/// Where each part sits in the canonical frame of a reference-sized hand:
/// the palmar bone midpoints' centroid for the palm, the bone midpoint for
/// the others. Part inputs are expressed relative to it, so first-layer
/// hyperplanes start out around the part rather than the wrist.
pub fn part_centers() -> &'static [Vec3; NUM_PARTS] {
    static CENTERS: OnceLock<[Vec3; NUM_PARTS]> = OnceLock::new();
    CENTERS.get_or_init(|| {
        let s = canonical_skeleton(&BoneLengths::reference());
        let mid = |b: usize| (s.joint(tree::parent_joint(b)) + s.joint(tree::child_joint(b))) * 0.5;
        std::array::from_fn(|p| {
            if p == 0 {
                (0..NUM_FINGERS).fold(Vec3::zero(), |a, b| a + mid(b)) * (1.0 / NUM_FINGERS as f64)
            } else {
                mid(NUM_FINGERS - 1 + p)
            }
        })
    })
}

/// Conditioning variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Pose code only.
    NasaBaseline,
    /// Pose code and the part's own bone length.
    HaloLocal,
    /// Pose code, own bone length and an encoding of all part lengths.
    HaloFull,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::NasaBaseline, Mode::HaloLocal, Mode::HaloFull];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::NasaBaseline => "nasa_baseline",
            Mode::HaloLocal => "halo_local",
            Mode::HaloFull => "halo_full",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "nasa" | "nasa_baseline" => Some(Mode::NasaBaseline),
            "local" | "halo_local" => Some(Mode::HaloLocal),
            "full" | "halo_full" => Some(Mode::HaloFull),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    pub mode: Mode,
    pub width: usize,
    /// Hidden layers per part: one input layer plus `layers - 1` residual ones.
    pub layers: usize,
    pub slope: f64,
    pub dropout: f64,
    pub pose_dim: usize,
    pub encoder_width: usize,
    pub encoder_dim: usize,
    /// Millimeters to network units for coordinates and the pose stack.
    pub coord_scale: f64,
    /// Millimeters to network units for bone lengths.
    pub length_scale: f64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        OccupancyConfig {
            mode: Mode::HaloFull,
            width: 40,
            layers: 4,
            slope: 0.1,
            dropout: 0.2,
            pose_dim: 8,
            encoder_width: 40,
            encoder_dim: 16,
            coord_scale: 0.01,
            length_scale: 0.02,
        }
    }
}

impl OccupancyConfig {
    pub fn with_mode(mode: Mode) -> Self {
        OccupancyConfig {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width == 0 || self.width > 64 {
            return bad("width must be in 1..=64");
        }
        if self.layers == 0 {
            return bad("layers must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.pose_dim == 0 || self.encoder_width == 0 || self.encoder_dim == 0 {
            return bad("pose and encoder sizes must be positive");
        }
        if !(self.coord_scale > 0.0 && self.length_scale > 0.0) {
            return bad("scales must be positive");
        }
        Ok(())
    }

    /// Shape feature size per part.
    pub fn shape_dim(&self) -> usize {
        match self.mode {
            Mode::NasaBaseline => 0,
            Mode::HaloLocal => 1,
            Mode::HaloFull => 1 + self.encoder_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.pose_dim + self.shape_dim()
    }
}

/// Network inputs derived from a skeleton, generic so they can be recorded
/// on a tape.
#[derive(Debug, Clone)]
pub struct PoseInputs<T = f64> {
    /// Posed → canonical transform per part (millimeters).
    pub transforms: [Rigid<T>; NUM_PARTS],
    /// `{B⁻¹ t0}` for the sixteen parts, scaled.
    pub stack: [T; 3 * NUM_PARTS],
    /// Scaled part lengths (palm: mean palmar length).
    pub lengths: [T; NUM_PARTS],
}

/// Part transforms, pose stack and lengths for a skeleton given as joints.
pub fn pose_inputs<T: Scalar>(
    joints: &[Vec3<T>; NUM_JOINTS],
    cfg: &OccupancyConfig,
) -> Result<PoseInputs<T>, CanonError> {
    let c = canonicalize_generic(joints, &CanonicalPose::default())?;
    let transforms: [Rigid<T>; NUM_PARTS] =
        std::array::from_fn(|p| if p == 0 { c.palm } else { c.inv[NUM_FINGERS - 1 + p] });
    let t0 = joints[0];
    let mut stack = [T::cst(0.0); 3 * NUM_PARTS];
    for (p, t) in transforms.iter().enumerate() {
        let v = t.apply(&t0);
        stack[3 * p] = v.x * cfg.coord_scale;
        stack[3 * p + 1] = v.y * cfg.coord_scale;
        stack[3 * p + 2] = v.z * cfg.coord_scale;
    }
    let mut palm = c.lengths[0];
    for l in &c.lengths[1..NUM_FINGERS] {
        palm = palm + *l;
    }
    let lengths = std::array::from_fn(|p| {
        if p == 0 {
            palm * (cfg.length_scale / NUM_FINGERS as f64)
        } else {
            c.lengths[NUM_FINGERS - 1 + p] * cfg.length_scale
        }
    });
    Ok(PoseInputs {
        transforms,
        stack,
        lengths,
    })
}

/// Per-part pose features and the transforms producing them.
#[derive(Debug, Clone)]
pub struct PoseDescriptor {
    pub transforms: [Rigid; NUM_PARTS],
    pub features: Vec<Vec<f64>>,
}

/// Everything about one hand that does not depend on the query point.
#[derive(Debug, Clone)]
pub(crate) struct PreparedHand {
    pub inputs: PoseInputs<f64>,
    /// Encoder hidden pre-activations (FULL mode).
    pub enc_pre: Vec<f64>,
    /// Feature vector per part (pose then shape).
    pub features: Vec<Vec<f64>>,
    /// Folded first-layer bias per part.
    pub bias: Vec<Vec<f64>>,
}

/// Query behavior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryMode {
    Inference,
    /// Dropout active, masks keyed by the seed.
    Train { seed: u64 },
}

/// The occupancy model. Parameters are stored as `f32` in a single flat
/// vector; see [`HandOccupancyModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct HandOccupancyModel {
    cfg: OccupancyConfig,
    layout: Layout,
    params: Vec<f32>,
}

fn mix_seed(seed: u64, part: usize) -> u64 {
    seed ^ (part as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl HandOccupancyModel {
    /// Kaiming-uniform weights (fan-in), zero biases, deterministic per seed.
    pub fn init(cfg: OccupancyConfig, seed: u64) -> Result<Self, Error> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let params = layout.init(&cfg, seed);
        Ok(HandOccupancyModel {
            cfg,
            layout,
            params,
        })
    }

    /// All parameters zero; every query returns exactly 0.5.
    pub fn zeros(cfg: OccupancyConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let params = vec![0.0; layout.total];
        Ok(HandOccupancyModel {
            cfg,
            layout,
            params,
        })
    }

    pub fn from_params(cfg: OccupancyConfig, params: Vec<f32>) -> Result<Self, Error> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch {
                expected: layout.total,
                got: params.len(),
            });
        }
        Ok(HandOccupancyModel {
            cfg,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &OccupancyConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Closed-form parameter count for a configuration.
    pub fn param_count(cfg: &OccupancyConfig) -> usize {
        Layout::new(cfg).total
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn params_as<F: Real>(&self) -> Vec<F> {
        self.params.iter().map(|&v| F::from_f64(v as f64)).collect()
    }

    pub(crate) fn prepare(&self, s: &Skeleton) -> Result<PreparedHand, Error> {
        self.prepare_with(&self.params, s)
    }

    /// Like [`prepare`](Self::prepare) with an explicit parameter vector.
    pub(crate) fn prepare_with<F: Real>(&self, p: &[F], s: &Skeleton) -> Result<PreparedHand, Error> {
        let inputs = pose_inputs(s.joints(), &self.cfg)?;
        Ok(self.prepare_inputs(p, inputs))
    }

    pub(crate) fn prepare_inputs<F: Real>(&self, p: &[F], inputs: PoseInputs<f64>) -> PreparedHand {
        let cfg = &self.cfg;
        let lay = &self.layout;
        let (enc_pre, code) = match &lay.encoder {
            Some(e) => {
                let mut pre = vec![0.0; cfg.encoder_width];
                for (j, v) in pre.iter_mut().enumerate() {
                    let row = &p[e.w1 + j * NUM_PARTS..e.w1 + (j + 1) * NUM_PARTS];
                    *v = p[e.b1 + j].to_f64()
                        + row.iter().zip(&inputs.lengths).map(|(&w, &l)| w.to_f64() * l).sum::<f64>();
                }
                let mut code = vec![0.0; cfg.encoder_dim];
                for (k, v) in code.iter_mut().enumerate() {
                    let row = &p[e.w2 + k * cfg.encoder_width..e.w2 + (k + 1) * cfg.encoder_width];
                    *v = p[e.b2 + k].to_f64()
                        + row
                            .iter()
                            .zip(&pre)
                            .map(|(&w, &h)| w.to_f64() * crate::diffcore::leaky_f64(h, cfg.slope))
                            .sum::<f64>();
                }
                (pre, code)
            }
            None => (vec![], vec![]),
        };
        let mut features = Vec::with_capacity(NUM_PARTS);
        let mut bias = Vec::with_capacity(NUM_PARTS);
        for part in 0..NUM_PARTS {
            let base = lay.part_offset(part);
            let mut f = Vec::with_capacity(cfg.feature_dim());
            for k in 0..cfg.pose_dim {
                let row = &p[base + lay.proj + k * 3 * NUM_PARTS..base + lay.proj + (k + 1) * 3 * NUM_PARTS];
                f.push(row.iter().zip(&inputs.stack).map(|(&w, &s)| w.to_f64() * s).sum::<f64>());
            }
            if cfg.mode != Mode::NasaBaseline {
                f.push(inputs.lengths[part]);
            }
            if cfg.mode == Mode::HaloFull {
                f.extend_from_slice(&code);
            }
            let mut b = vec![0.0; cfg.width];
            for (j, bj) in b.iter_mut().enumerate() {
                let row = &p[base + lay.w1 + j * lay.in_dim..base + lay.w1 + (j + 1) * lay.in_dim];
                *bj = p[base + lay.b1 + j].to_f64()
                    + row[3..].iter().zip(&f).map(|(&w, &v)| w.to_f64() * v).sum::<f64>();
            }
            features.push(f);
            bias.push(b);
        }
        PreparedHand {
            inputs,
            enc_pre,
            features,
            bias,
        }
    }

    /// Scaled canonical coordinates of `pts` in part `part`'s frame,
    /// relative to the part center.
    pub(crate) fn local_coords<F: Real>(&self, prep: &PreparedHand, part: usize, pts: &[Vec3]) -> Vec<F> {
        let t = &prep.inputs.transforms[part];
        let o = part_centers()[part];
        let s = self.cfg.coord_scale;
        let mut out = Vec::with_capacity(3 * pts.len());
        for p in pts {
            let q = t.apply(p) - o;
            out.push(F::from_f64(q.x * s));
            out.push(F::from_f64(q.y * s));
            out.push(F::from_f64(q.z * s));
        }
        out
    }

    /// Logits of all parts for `pts`, part-major (`NUM_PARTS × n`).
    pub(crate) fn part_logits_with<F: Real>(
        &self,
        params: &[F],
        prep: &PreparedHand,
        pts: &[Vec3],
        mode: QueryMode,
        row_base: u32,
    ) -> Vec<F> {
        let n = pts.len();
        let rows: Vec<u32> = (0..n as u32).map(|r| r + row_base).collect();
        let mut out = vec![F::ZERO; NUM_PARTS * n];
        for (part, o) in out.chunks_mut(n.max(1)).enumerate().take(NUM_PARTS) {
            if n == 0 {
                break;
            }
            let net = self.layout.part_net(params, part);
            let x = self.local_coords::<F>(prep, part, pts);
            let c: Vec<F> = prep.bias[part].iter().map(|&v| F::from_f64(v)).collect();
            let act = self.activation(mode, part);
            kernel::forward(&net, &x, &c, &act, &rows, o, None);
        }
        out
    }

    pub(crate) fn activation(&self, mode: QueryMode, part: usize) -> Activation<'static> {
        Activation {
            slope: self.cfg.slope,
            dropout: match mode {
                QueryMode::Train { seed } if self.cfg.dropout > 0.0 => {
                    Some((mix_seed(seed, part), self.cfg.dropout))
                }
                _ => None,
            },
            frozen: None,
        }
    }

    /// Per-point part logits in f64, chunked and possibly parallel.
    /// Returns `n` rows of `NUM_PARTS` logits.
    fn logits_rows(&self, prep: &PreparedHand, pts: &[Vec3], mode: QueryMode) -> Vec<[f64; NUM_PARTS]> {
        let params = self.params_as::<f64>();
        let chunks = par::map_chunks(pts.len(), CHUNK, |r| {
            let n = r.len();
            let l = self.part_logits_with::<f64>(&params, prep, &pts[r.clone()], mode, r.start as u32);
            (0..n)
                .map(|i| std::array::from_fn(|p| l[p * n + i]))
                .collect::<Vec<_>>()
        });
        chunks.into_iter().flatten().collect()
    }

    /// Occupancy in (0, 1) for each point: logistic of the maximum part logit.
    pub fn query_occupancy(&self, s: &Skeleton, pts: &[Vec3], mode: QueryMode) -> Result<Vec<f64>, Error> {
        let prep = self.prepare(s)?;
        Ok(self
            .logits_rows(&prep, pts, mode)
            .iter()
            .map(|row| logistic_f64(row.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
            .collect())
    }

    /// Inference-mode occupancy.
    pub fn query(&self, s: &Skeleton, pts: &[Vec3]) -> Result<Vec<f64>, Error> {
        self.query_occupancy(s, pts, QueryMode::Inference)
    }

    /// Per-part occupancies (logistic of each part logit), one row per point.
    pub fn part_occupancies(&self, s: &Skeleton, pts: &[Vec3]) -> Result<Vec<[f64; NUM_PARTS]>, Error> {
        let prep = self.prepare(s)?;
        Ok(self
            .logits_rows(&prep, pts, QueryMode::Inference)
            .into_iter()
            .map(|row| row.map(logistic_f64))
            .collect())
    }

    /// Occupancy and the index of the part attaining the maximum.
    pub fn query_with_parts(&self, s: &Skeleton, pts: &[Vec3]) -> Result<(Vec<f64>, Vec<usize>), Error> {
        let prep = self.prepare(s)?;
        Ok(self
            .logits_rows(&prep, pts, QueryMode::Inference)
            .iter()
            .map(|row| {
                let (arg, best) = argmax(row);
                (logistic_f64(best), arg)
            })
            .unzip())
    }

    /// One part network on a point already in that part's canonical frame
    /// (millimeters), with an explicit feature vector (pose then shape).
    pub fn part_occupancy(&self, part: usize, x_canonical: &Vec3, features: &[f64]) -> Result<f64, Error> {
        if part >= NUM_PARTS {
            return Err(Error::PartIndexOutOfRange(part));
        }
        if features.len() != self.cfg.feature_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.cfg.feature_dim(),
                got: features.len(),
            });
        }
        let params = self.params_as::<f64>();
        let lay = &self.layout;
        let base = lay.part_offset(part);
        let c: Vec<f64> = (0..self.cfg.width)
            .map(|j| {
                let row = &params[base + lay.w1 + j * lay.in_dim..base + lay.w1 + (j + 1) * lay.in_dim];
                params[base + lay.b1 + j] + row[3..].iter().zip(features).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let s = self.cfg.coord_scale;
        let q = *x_canonical - part_centers()[part];
        let x = [q.x * s, q.y * s, q.z * s];
        let mut out = [0.0];
        let net = lay.part_net(&params, part);
        kernel::forward(&net, &x, &c, &Activation::inference(self.cfg.slope), &[0], &mut out, None);
        Ok(logistic_f64(out[0]))
    }

    /// Part transforms and projected pose features for a skeleton.
    pub fn pose_descriptor(&self, s: &Skeleton) -> Result<PoseDescriptor, Error> {
        let prep = self.prepare(s)?;
        Ok(PoseDescriptor {
            transforms: prep.inputs.transforms,
            features: prep
                .features
                .iter()
                .map(|f| f[..self.cfg.pose_dim].to_vec())
                .collect(),
        })
    }

    /// Full feature vector (pose then shape) per part, as fed to
    /// [`part_occupancy`](Self::part_occupancy).
    pub fn part_features(&self, s: &Skeleton) -> Result<Vec<Vec<f64>>, Error> {
        Ok(self.prepare(s)?.features)
    }
}

pub(crate) fn argmax(row: &[f64; NUM_PARTS]) -> (usize, f64) {
    let mut arg = 0;
    for p in 1..NUM_PARTS {
        if row[p] > row[arg] {
            arg = p;
        }
    }
    (arg, row[arg])
}

/// Rotation entries then translation per part, the layout used when seeding
/// the tape with transform adjoints.
pub(crate) fn flatten_transform<T: Scalar>(t: &Rigid<T>) -> [T; 12] {
    let r: [T; 9] = t.rot.flatten();
    std::array::from_fn(|i| if i < 9 { r[i] } else { t.trans.to_array()[i - 9] })
}

#[cfg(test)]
mod tests;
