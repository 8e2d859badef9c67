//! Gradients of occupancy with respect to keypoints and query points.
//!
//! The network part runs its own backward pass; the resulting adjoints of
//! the part transforms, the pose stack and the part lengths seed a tape on
//! which the canonicalization was recorded.

use crate::diffcore::{check_gradient_rounded, logistic_f64, record, GradCheck, Var};
use crate::geometry::Vec3;
use crate::skeleton::{Handedness, Skeleton, NUM_JOINTS};
use crate::Error;

use super::kernel::{self, Activation, Cache};
use super::{argmax, flatten_transform, pose_inputs, HandOccupancyModel, Mode, PreparedHand, QueryMode, NUM_PARTS};

/// Which part wins each point and the sign of every leaky unit along the
/// winning part's network. Holding it fixed makes occupancy a smooth
/// function of the keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    pub part: Vec<u8>,
    /// `layers` words per point.
    pub signs: Vec<u64>,
    pub layers: usize,
}

#[derive(Debug, Clone)]
pub struct OccupancyGradient {
    pub values: Vec<f64>,
    /// d/d(joint coordinates), 63 entries in right-hand convention.
    pub joints: Vec<f64>,
    /// d/d(query point), per point.
    pub points: Vec<Vec3>,
    pub pattern: ActivationPattern,
}

struct PartRun {
    part: usize,
    rows: Vec<usize>,
    cache: Cache<f64>,
    logits: Vec<f64>,
}

impl HandOccupancyModel {
    fn winning_parts(&self, prep: &PreparedHand, pts: &[Vec3]) -> Vec<u8> {
        let params = self.params_as::<f64>();
        let n = pts.len();
        let l = self.part_logits_with::<f64>(&params, prep, pts, QueryMode::Inference, 0);
        (0..n)
            .map(|i| argmax(&std::array::from_fn(|p| l[p * n + i])).0 as u8)
            .collect()
    }

    /// Runs the winning part of every point with caching, optionally with a
    /// frozen sign pattern.
    fn run_winners(
        &self,
        params: &[f64],
        prep: &PreparedHand,
        pts: &[Vec3],
        part_of: &[u8],
        frozen: Option<&ActivationPattern>,
    ) -> Vec<PartRun> {
        let layers = self.cfg.layers;
        let mut runs = Vec::new();
        for part in 0..NUM_PARTS {
            let rows: Vec<usize> = (0..pts.len()).filter(|&i| part_of[i] as usize == part).collect();
            if rows.is_empty() {
                continue;
            }
            let sub: Vec<Vec3> = rows.iter().map(|&i| pts[i]).collect();
            let x = self.local_coords::<f64>(prep, part, &sub);
            let signs: Option<Vec<u64>> = frozen.map(|f| {
                rows.iter()
                    .flat_map(|&i| f.signs[i * layers..(i + 1) * layers].iter().copied())
                    .collect()
            });
            let act = Activation {
                slope: self.cfg.slope,
                dropout: None,
                frozen: signs.as_deref(),
            };
            let ids: Vec<u32> = rows.iter().map(|&i| i as u32).collect();
            let mut logits = vec![0.0; rows.len()];
            let mut cache = Cache::default();
            let net = self.layout.part_net(params, part);
            kernel::forward(&net, &x, &prep.bias[part], &act, &ids, &mut logits, Some(&mut cache));
            runs.push(PartRun {
                part,
                rows,
                cache,
                logits,
            });
        }
        runs
    }

    /// The activation pattern at the given configuration.
    pub fn activation_pattern(&self, s: &Skeleton, pts: &[Vec3]) -> Result<ActivationPattern, Error> {
        let prep = self.prepare(s)?;
        let part_of = self.winning_parts(&prep, pts);
        let runs = self.run_winners(&self.params_as::<f64>(), &prep, pts, &part_of, None);
        Ok(self.pattern_from(&runs, part_of, pts.len()))
    }

    fn pattern_from(&self, runs: &[PartRun], part: Vec<u8>, n: usize) -> ActivationPattern {
        let layers = self.cfg.layers;
        let mut signs = vec![0u64; n * layers];
        for run in runs {
            let s = run.cache.signs(self.cfg.width);
            for (k, &i) in run.rows.iter().enumerate() {
                signs[i * layers..(i + 1) * layers].copy_from_slice(&s[k * layers..(k + 1) * layers]);
            }
        }
        ActivationPattern {
            part,
            signs,
            layers,
        }
    }

    /// Occupancy with the winning part and every leaky unit held to `pattern`.
    /// Equals [`query`](Self::query) at the configuration the pattern was
    /// taken from.
    pub fn query_frozen(&self, s: &Skeleton, pts: &[Vec3], pattern: &ActivationPattern) -> Result<Vec<f64>, Error> {
        let prep = self.prepare(s)?;
        let runs = self.run_winners(&self.params_as::<f64>(), &prep, pts, &pattern.part, Some(pattern));
        let mut out = vec![0.0; pts.len()];
        for run in &runs {
            for (k, &i) in run.rows.iter().enumerate() {
                out[i] = logistic_f64(run.logits[k]);
            }
        }
        Ok(out)
    }

    /// Checks the keypoint gradient of the mean occupancy over `pts` against
    /// central differences (step `h`, in mm) with the activation pattern
    /// held fixed.
    pub fn check_joint_gradient(&self, s: &Skeleton, pts: &[Vec3], h: f64) -> Result<GradCheck, Error> {
        let n = pts.len().max(1) as f64;
        let g = self.occupancy_gradient(s, pts, None, |v| vec![1.0 / n; v.len()])?;
        let v0 = g.values.iter().sum::<f64>() / n;
        let mean = |x: &[f64]| match Skeleton::from_flat(x, Handedness::Right) {
            Ok(sk) => self
                .query_frozen(&sk, pts, &g.pattern)
                .map_or(f64::NAN, |v| v.iter().sum::<f64>() / n),
            Err(_) => f64::NAN,
        };
        Ok(check_gradient_rounded(mean, g.joints, &s.to_flat(), h, v0))
    }

    /// Gradient of `Σ_i w_i O(x_i)` where the weights are chosen from the
    /// occupancies by `weights`. With `pattern` the winning parts and unit
    /// signs are taken from it instead of the current configuration.
    pub fn occupancy_gradient(
        &self,
        s: &Skeleton,
        pts: &[Vec3],
        pattern: Option<&ActivationPattern>,
        weights: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<OccupancyGradient, Error> {
        let prep = self.prepare(s)?;
        let params = self.params_as::<f64>();
        let part_of = match pattern {
            Some(p) => p.part.clone(),
            None => self.winning_parts(&prep, pts),
        };
        let runs = self.run_winners(&params, &prep, pts, &part_of, pattern);
        let mut values = vec![0.0; pts.len()];
        for run in &runs {
            for (k, &i) in run.rows.iter().enumerate() {
                values[i] = logistic_f64(run.logits[k]);
            }
        }
        let w = weights(&values);
        assert_eq!(w.len(), pts.len(), "one weight per point");

        let cfg = &self.cfg;
        let lay = &self.layout;
        let cs = cfg.coord_scale;
        let mut d_transform = [[0.0f64; 12]; NUM_PARTS];
        let mut d_stack = [0.0f64; 3 * NUM_PARTS];
        let mut d_len = [0.0f64; NUM_PARTS];
        let mut d_code = vec![0.0f64; cfg.encoder_dim];
        let mut d_points = vec![Vec3::zero(); pts.len()];
        let mut scratch = vec![0.0f64; lay.part_stride];

        for run in &runs {
            let part = run.part;
            let g: Vec<f64> = run
                .rows
                .iter()
                .map(|&i| {
                    let o = values[i];
                    w[i] * o * (1.0 - o)
                })
                .collect();
            let frozen_signs: Option<Vec<u64>> = pattern.map(|p| {
                run.rows
                    .iter()
                    .flat_map(|&i| p.signs[i * cfg.layers..(i + 1) * cfg.layers].iter().copied())
                    .collect()
            });
            let act = Activation {
                slope: cfg.slope,
                dropout: None,
                frozen: frozen_signs.as_deref(),
            };
            let net = lay.part_net(&params, part);
            scratch.iter_mut().for_each(|v| *v = 0.0);
            let (_, mut pg) = lay.part_grad(&mut scratch);
            let mut gx = vec![0.0; 3 * run.rows.len()];
            let gc = kernel::backward(&net, &run.cache, &g, &act, &mut pg, Some(&mut gx));

            let t = &prep.inputs.transforms[part];
            let rt = t.rot.transpose();
            for (k, &i) in run.rows.iter().enumerate() {
                let gl = Vec3::new(gx[3 * k] * cs, gx[3 * k + 1] * cs, gx[3 * k + 2] * cs);
                let p = pts[i];
                let pa = p.to_array();
                let ga = gl.to_array();
                for r in 0..3 {
                    for c in 0..3 {
                        d_transform[part][3 * r + c] += ga[r] * pa[c];
                    }
                    d_transform[part][9 + r] += ga[r];
                }
                d_points[i] = rt.mul_vec(&gl);
            }

            let base = lay.part_offset(part);
            let fdim = cfg.feature_dim();
            let mut d_feat = vec![0.0; fdim];
            for (j, &gj) in gc.iter().enumerate() {
                let row = &params[base + lay.w1 + j * lay.in_dim + 3..base + lay.w1 + (j + 1) * lay.in_dim];
                for (df, &wv) in d_feat.iter_mut().zip(row) {
                    *df += gj * wv;
                }
            }
            for k in 0..cfg.pose_dim {
                let row = &params[base + lay.proj + k * 3 * NUM_PARTS..base + lay.proj + (k + 1) * 3 * NUM_PARTS];
                for (ds, &pv) in d_stack.iter_mut().zip(row) {
                    *ds += d_feat[k] * pv;
                }
            }
            if cfg.mode != Mode::NasaBaseline {
                d_len[part] += d_feat[cfg.pose_dim];
            }
            if cfg.mode == Mode::HaloFull {
                for (dc, &df) in d_code.iter_mut().zip(&d_feat[cfg.pose_dim + 1..]) {
                    *dc += df;
                }
            }
        }

        if let Some(e) = &lay.encoder {
            for (j, &pre) in prep.enc_pre.iter().enumerate() {
                let mut acc = 0.0;
                for (k, &dc) in d_code.iter().enumerate() {
                    acc += dc * params[e.w2 + k * cfg.encoder_width + j];
                }
                let dpre = acc * if pre > 0.0 { 1.0 } else { cfg.slope };
                for (i, dl) in d_len.iter_mut().enumerate() {
                    *dl += dpre * params[e.w1 + j * NUM_PARTS + i];
                }
            }
        }

        let mut seed = Vec::with_capacity(12 * NUM_PARTS + 4 * NUM_PARTS);
        for d in &d_transform {
            seed.extend_from_slice(d);
        }
        seed.extend_from_slice(&d_stack);
        seed.extend_from_slice(&d_len);
        let joints = joint_adjoints(s, cfg, &seed)?;
        Ok(OccupancyGradient {
            values,
            joints,
            points: d_points,
            pattern: self.pattern_from(&runs, part_of, pts.len()),
        })
    }
}

/// Pulls adjoints of the pose inputs back to the 63 joint coordinates.
fn joint_adjoints(s: &Skeleton, cfg: &super::OccupancyConfig, seed: &[f64]) -> Result<Vec<f64>, Error> {
    // the f64 path succeeded on this skeleton, so the recorded one does too
    crate::canonicalization::canonicalize(s)?;
    let rec = record(&s.to_flat(), |x| {
        let joints: [Vec3<Var>; NUM_JOINTS] =
            std::array::from_fn(|j| Vec3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]));
        let pi = pose_inputs(&joints, cfg).expect("validated above");
        let mut out = Vec::with_capacity(seed.len());
        for t in &pi.transforms {
            out.extend_from_slice(&flatten_transform(t));
        }
        out.extend_from_slice(&pi.stack);
        out.extend_from_slice(&pi.lengths);
        out
    });
    Ok(rec.backward(seed)?)
}
