//! Flat parameter layout.
//!
//! Per part, in order: pose projection `Π` (`pose_dim × 48`), `W1`
//! (`width × in_dim`, columns `[x y z | features]`), `b1`, then for each
//! residual layer `W` (`width × width`) and `b`, then `w_out` and `b_out`.
//! The shared length encoder (FULL mode) follows the sixteen parts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{PartGrad, PartNet};
use super::{Mode, OccupancyConfig, NUM_PARTS};

/// Extra factors on the first layer's uniform fan-in draw. Part-local
/// coordinates span a few tenths of a unit while the pose and shape
/// features are of order one; without these the first-layer kinks sit far
/// outside the part and the network starts out nearly linear where it
/// matters.
const COORD_GAIN: f32 = 6.0;
const FEATURE_GAIN: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct EncoderLayout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Layout {
    pub width: usize,
    pub in_dim: usize,
    pub pose_dim: usize,
    pub part_stride: usize,
    pub proj: usize,
    pub w1: usize,
    pub b1: usize,
    pub res: Vec<(usize, usize)>,
    pub wout: usize,
    pub bout: usize,
    pub encoder: Option<EncoderLayout>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &OccupancyConfig) -> Self {
        let w = cfg.width;
        let in_dim = 3 + cfg.feature_dim();
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let proj = take(cfg.pose_dim * 3 * NUM_PARTS);
        let w1 = take(w * in_dim);
        let b1 = take(w);
        let res = (1..cfg.layers).map(|_| (take(w * w), take(w))).collect();
        let wout = take(w);
        let bout = take(1);
        let part_stride = off;
        let mut total = part_stride * NUM_PARTS;
        let encoder = (cfg.mode == Mode::HaloFull).then(|| {
            let mut take = |n: usize| {
                let o = total;
                total += n;
                o
            };
            EncoderLayout {
                w1: take(cfg.encoder_width * NUM_PARTS),
                b1: take(cfg.encoder_width),
                w2: take(cfg.encoder_dim * cfg.encoder_width),
                b2: take(cfg.encoder_dim),
            }
        });
        Layout {
            width: w,
            in_dim,
            pose_dim: cfg.pose_dim,
            part_stride,
            proj,
            w1,
            b1,
            res,
            wout,
            bout,
            encoder,
            total,
        }
    }

    pub fn part_offset(&self, part: usize) -> usize {
        part * self.part_stride
    }

    pub fn part_net<'a, F: Copy>(&self, p: &'a [F], part: usize) -> PartNet<'a, F> {
        let base = self.part_offset(part);
        let w = self.width;
        PartNet {
            width: w,
            in_dim: self.in_dim,
            w1: &p[base + self.w1..base + self.w1 + w * self.in_dim],
            res: self
                .res
                .iter()
                .map(|&(a, b)| (&p[base + a..base + a + w * w], &p[base + b..base + b + w]))
                .collect(),
            wout: &p[base + self.wout..base + self.wout + w],
            bout: p[base + self.bout],
        }
    }

    /// Gradient views of one part's block (`g` is that block only).
    pub fn part_grad<'a, F>(&self, g: &'a mut [F]) -> (&'a mut [F], PartGrad<'a, F>) {
        let w = self.width;
        let (proj, rest) = g.split_at_mut(self.w1);
        let (w1, rest) = rest.split_at_mut(w * self.in_dim);
        let (b1, mut rest) = rest.split_at_mut(w);
        let mut res = Vec::with_capacity(self.res.len());
        for _ in &self.res {
            let (a, r) = rest.split_at_mut(w * w);
            let (b, r) = r.split_at_mut(w);
            res.push((a, b));
            rest = r;
        }
        let (wout, rest) = rest.split_at_mut(w);
        let bout = &mut rest[0];
        (
            proj,
            PartGrad {
                w1,
                b1,
                res,
                wout,
                bout,
            },
        )
    }

    pub fn init(&self, cfg: &OccupancyConfig, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0f32; self.total];
        let gain_leaky = 2.0 / (1.0 + cfg.slope * cfg.slope);
        let mut fill = |p: &mut [f32], fan_in: usize, gain: f64| {
            let bound = (3.0 * gain / fan_in as f64).sqrt();
            for v in p.iter_mut() {
                *v = (rng.random_range(-bound..bound)) as f32;
            }
        };
        let w = self.width;
        for part in 0..NUM_PARTS {
            let base = self.part_offset(part);
            let stack = 3 * NUM_PARTS;
            fill(&mut p[base + self.proj..base + self.proj + self.pose_dim * stack], stack, 1.0);
            fill(&mut p[base + self.w1..base + self.w1 + w * self.in_dim], self.in_dim, gain_leaky);
            for row in p[base + self.w1..base + self.w1 + w * self.in_dim].chunks_exact_mut(self.in_dim) {
                let (x, f) = row.split_at_mut(3);
                x.iter_mut().for_each(|v| *v *= COORD_GAIN);
                f.iter_mut().for_each(|v| *v *= FEATURE_GAIN);
            }
            for &(a, _) in &self.res {
                fill(&mut p[base + a..base + a + w * w], w, gain_leaky);
            }
            fill(&mut p[base + self.wout..base + self.wout + w], w, 1.0);
        }
        if let Some(e) = &self.encoder {
            fill(&mut p[e.w1..e.b1], NUM_PARTS, gain_leaky);
            fill(&mut p[e.w2..e.b2], cfg.encoder_width, 1.0);
        }
        p
    }
}
