//! Training loss and its parameter gradient for one hand.
//!
//! Occupancy loss back-propagates through the winning part of each point
//! only (the maximum is piecewise selection); the skinning loss touches all
//! sixteen parts.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::skeleton::Skeleton;
use crate::Error;

use super::kernel::{self, Cache, Real};
use super::{argmax, HandOccupancyModel, Mode, PreparedHand, QueryMode, NUM_PARTS, SKIN_TARGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error between logistic outputs and labels.
    #[default]
    Mse,
    /// Binary cross-entropy on the logits.
    Bce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub lambda_skin: f64,
    pub kind: LossKind,
    /// `Some(seed)` enables dropout with masks keyed by the seed.
    pub dropout_seed: Option<u64>,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            lambda_skin: 0.5,
            kind: LossKind::Mse,
            dropout_seed: None,
        }
    }
}

/// Supervision for one posed hand.
#[derive(Debug, Clone, Copy)]
pub struct SampleBatch<'a> {
    pub points: &'a [Vec3],
    /// 1 inside, 0 outside.
    pub labels: &'a [u8],
    pub surface: &'a [Vec3],
    /// Skinning weights per surface point.
    pub skin: &'a [[f64; NUM_PARTS]],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleLoss {
    pub occupancy: f64,
    pub skinning: f64,
    /// `occupancy + lambda_skin * skinning`.
    pub total: f64,
}

fn logistic<F: Real>(z: F) -> f64 {
    crate::diffcore::logistic_f64(z.to_f64())
}

/// Loss value and logit adjoint for one prediction.
pub(crate) fn point_loss(kind: LossKind, logit: f64, label: f64) -> (f64, f64) {
    match kind {
        LossKind::Mse => {
            let o = crate::diffcore::logistic_f64(logit);
            let d = o - label;
            (d * d, 2.0 * d * o * (1.0 - o))
        }
        LossKind::Bce => {
            // log(1 + e^z) - y z, stable in both tails
            let sp = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
            (sp - label * logit, crate::diffcore::logistic_f64(logit) - label)
        }
    }
}

impl HandOccupancyModel {
    /// Loss on one hand, adding its parameter gradient to `grad` (same
    /// layout as the parameters). `params` is the parameter vector converted
    /// to the kernel float type.
    pub(crate) fn loss_gradient<F: Real>(
        &self,
        params: &[F],
        s: &Skeleton,
        batch: &SampleBatch,
        opts: &LossOptions,
        grad: &mut [f64],
    ) -> Result<SampleLoss, Error> {
        let n = batch.points.len();
        let m = batch.surface.len();
        if batch.labels.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: batch.labels.len(),
            });
        }
        if batch.skin.len() != m {
            return Err(Error::ShapeMismatch {
                expected: m,
                got: batch.skin.len(),
            });
        }
        if grad.len() != self.layout.total {
            return Err(Error::ShapeMismatch {
                expected: self.layout.total,
                got: grad.len(),
            });
        }
        let prep = self.prepare_with(params, s)?;
        let qmode = match opts.dropout_seed {
            Some(seed) => QueryMode::Train { seed },
            None => QueryMode::Inference,
        };
        let cfg = &self.cfg;
        let w = cfg.width;

        // occupancy: winning part per point
        let all = self.part_logits_with::<F>(params, &prep, batch.points, qmode, 0);
        let mut by_part: Vec<Vec<usize>> = vec![Vec::new(); NUM_PARTS];
        for i in 0..n {
            let row: [f64; NUM_PARTS] = std::array::from_fn(|p| all[p * n + i].to_f64());
            by_part[argmax(&row).0].push(i);
        }
        let mut loss = SampleLoss::default();
        let inv_n = 1.0 / n.max(1) as f64;
        let inv_m = 1.0 / m.max(1) as f64;

        // skinning: every part on every surface point
        let skin_rows: Vec<u32> = (0..m as u32).map(|r| r + n as u32).collect();

        let mut scratch = vec![F::ZERO; self.layout.part_stride];
        for part in 0..NUM_PARTS {
            let mut gc_total = vec![0.0f64; w];
            let c: Vec<F> = prep.bias[part].iter().map(|&v| F::from_f64(v)).collect();
            let act = self.activation(qmode, part);
            let net = self.layout.part_net(params, part);
            scratch.iter_mut().for_each(|v| *v = F::ZERO);
            let (_, mut pg) = self.layout.part_grad(&mut scratch);
            let mut touched = false;

            let rows = &by_part[part];
            if !rows.is_empty() {
                let pts: Vec<Vec3> = rows.iter().map(|&i| batch.points[i]).collect();
                let ids: Vec<u32> = rows.iter().map(|&i| i as u32).collect();
                let x = self.local_coords::<F>(&prep, part, &pts);
                let mut logits = vec![F::ZERO; rows.len()];
                let mut cache = Cache::default();
                kernel::forward(&net, &x, &c, &act, &ids, &mut logits, Some(&mut cache));
                let g: Vec<F> = rows
                    .iter()
                    .zip(&logits)
                    .map(|(&i, &z)| {
                        let (l, d) = point_loss(opts.kind, z.to_f64(), batch.labels[i] as f64);
                        loss.occupancy += l * inv_n;
                        F::from_f64(d * inv_n)
                    })
                    .collect();
                let gc = kernel::backward(&net, &cache, &g, &act, &mut pg, None);
                for (t, v) in gc_total.iter_mut().zip(gc) {
                    *t += v.to_f64();
                }
                touched = true;
            }

            if m > 0 && opts.lambda_skin > 0.0 {
                let x = self.local_coords::<F>(&prep, part, batch.surface);
                let mut logits = vec![F::ZERO; m];
                let mut cache = Cache::default();
                kernel::forward(&net, &x, &c, &act, &skin_rows, &mut logits, Some(&mut cache));
                let g: Vec<F> = logits
                    .iter()
                    .zip(batch.skin)
                    .map(|(&z, wt)| {
                        let o = logistic(z);
                        let d = o - SKIN_TARGET * wt[part];
                        loss.skinning += d * d * inv_m;
                        F::from_f64(opts.lambda_skin * 2.0 * d * o * (1.0 - o) * inv_m)
                    })
                    .collect();
                let gc = kernel::backward(&net, &cache, &g, &act, &mut pg, None);
                for (t, v) in gc_total.iter_mut().zip(gc) {
                    *t += v.to_f64();
                }
                touched = true;
            }
            if !touched {
                continue;
            }
            let base = self.layout.part_offset(part);
            for (gv, &sv) in grad[base..base + self.layout.part_stride].iter_mut().zip(&scratch) {
                *gv += sv.to_f64();
            }
            self.feature_backward(params, &prep, part, &gc_total, grad);
        }
        // with the skinning term switched off its value is still reported
        if m > 0 && opts.lambda_skin == 0.0 {
            loss.skinning = self.skinning_value(params, &prep, batch, qmode, n as u32);
        }
        loss.total = loss.occupancy + opts.lambda_skin * loss.skinning;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                detail: format!("occupancy {} skinning {}", loss.occupancy, loss.skinning),
            });
        }
        Ok(loss)
    }

    fn skinning_value<F: Real>(
        &self,
        params: &[F],
        prep: &PreparedHand,
        batch: &SampleBatch,
        qmode: QueryMode,
        row_base: u32,
    ) -> f64 {
        let m = batch.surface.len();
        let l = self.part_logits_with::<F>(params, prep, batch.surface, qmode, row_base);
        let mut acc = 0.0;
        for (i, wt) in batch.skin.iter().enumerate() {
            for (p, &target) in wt.iter().enumerate() {
                let d = logistic(l[p * m + i]) - SKIN_TARGET * target;
                acc += d * d;
            }
        }
        acc / m as f64
    }

    /// Pushes the folded-bias adjoint of one part into the pose projector,
    /// the feature columns of the first layer and the length encoder.
    fn feature_backward<F: Real>(&self, params: &[F], prep: &PreparedHand, part: usize, gc: &[f64], grad: &mut [f64]) {
        let cfg = &self.cfg;
        let lay = &self.layout;
        let base = lay.part_offset(part);
        let feats = &prep.features[part];
        let stack = 3 * NUM_PARTS;
        let mut d_feat = vec![0.0; feats.len()];
        for (j, &gj) in gc.iter().enumerate() {
            let col = base + lay.w1 + j * lay.in_dim + 3;
            for (k, &f) in feats.iter().enumerate() {
                grad[col + k] += gj * f;
                d_feat[k] += gj * params[col + k].to_f64();
            }
        }
        for k in 0..cfg.pose_dim {
            let row = base + lay.proj + k * stack;
            for (g, &s) in grad[row..row + stack].iter_mut().zip(&prep.inputs.stack) {
                *g += d_feat[k] * s;
            }
        }
        if let (Some(e), Mode::HaloFull) = (&lay.encoder, cfg.mode) {
            let d_code = &d_feat[cfg.pose_dim + 1..];
            let ew = cfg.encoder_width;
            for (k, &dc) in d_code.iter().enumerate() {
                grad[e.b2 + k] += dc;
                for (j, &pre) in prep.enc_pre.iter().enumerate() {
                    grad[e.w2 + k * ew + j] += dc * crate::diffcore::leaky_f64(pre, cfg.slope);
                }
            }
            for (j, &pre) in prep.enc_pre.iter().enumerate() {
                let mut acc = 0.0;
                for (k, &dc) in d_code.iter().enumerate() {
                    acc += dc * params[e.w2 + k * ew + j].to_f64();
                }
                let dpre = acc * if pre > 0.0 { 1.0 } else { cfg.slope };
                grad[e.b1 + j] += dpre;
                for (i, &len) in prep.inputs.lengths.iter().enumerate() {
                    grad[e.w1 + j * NUM_PARTS + i] += dpre * len;
                }
            }
        }
    }

    /// Loss value only, with the same dropout masks as
    /// [`loss_gradient`](Self::loss_gradient).
    #[cfg(test)]
    pub(crate) fn loss_value<F: Real>(
        &self,
        params: &[F],
        s: &Skeleton,
        batch: &SampleBatch,
        opts: &LossOptions,
    ) -> Result<SampleLoss, Error> {
        let prep = self.prepare_with(params, s)?;
        let qmode = match opts.dropout_seed {
            Some(seed) => QueryMode::Train { seed },
            None => QueryMode::Inference,
        };
        let n = batch.points.len();
        let all = self.part_logits_with::<F>(params, &prep, batch.points, qmode, 0);
        let mut occ = 0.0;
        for i in 0..n {
            let row: [f64; NUM_PARTS] = std::array::from_fn(|p| all[p * n + i].to_f64());
            occ += point_loss(opts.kind, argmax(&row).1, batch.labels[i] as f64).0;
        }
        occ /= n.max(1) as f64;
        let skin = if batch.surface.is_empty() {
            0.0
        } else {
            self.skinning_value(params, &prep, batch, qmode, n as u32)
        };
        Ok(SampleLoss {
            occupancy: occ,
            skinning: skin,
            total: occ + opts.lambda_skin * skin,
        })
    }
}
