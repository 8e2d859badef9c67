//! Ground truth from procedural capsule hands, and the training loop.

mod adam;
mod capsule;
pub mod corpus;
mod loss;
mod sampling;

pub use adam::Adam;
pub use capsule::{CapsuleHand, FINGER_RADII, PALM_RADIUS, SKIN_TEMPERATURE};
pub use corpus::{generate_hands, held_out_poses, split_index, CorpusSpec};
pub use loss::{occupancy_loss, occupancy_loss_grad, skinning_loss, skinning_loss_from_parts};
pub use sampling::{
    read_points, sample_query_points, sampling_box, uniform_in_box, write_points, LabeledPointSet, Strategy,
    BOX_MARGIN,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::occupancy::{HandOccupancyModel, LossKind, LossOptions, OccupancyConfig, SampleBatch, SampleLoss, NUM_PARTS};
use crate::par;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: OccupancyConfig,
    pub lambda_skin: f64,
    /// Validation IoU at which the skinning term is switched off for good.
    pub skin_cutoff_iou: f64,
    pub learning_rate: f64,
    /// Learning rate at the last step as a fraction of the initial one,
    /// reached along a cosine; 1 keeps the rate constant.
    pub final_lr_fraction: f64,
    /// Hands per step.
    pub batch_size: usize,
    /// Query points per hand per step.
    pub points_per_hand: usize,
    /// Surface points per hand per step for the skinning term.
    pub surface_per_hand: usize,
    /// Surface pool size per hand.
    pub surface_pool: usize,
    /// Pre-sampled points per strategy per hand; 0 draws fresh points from
    /// the oracle every step.
    pub presample: usize,
    /// Noise of the near-surface strategy (mm).
    pub noise_sigma: f64,
    pub steps: usize,
    pub eval_every: usize,
    pub loss: LossKind,
    pub dropout: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: OccupancyConfig::default(),
            lambda_skin: 0.5,
            skin_cutoff_iou: 0.8,
            learning_rate: 1e-4,
            final_lr_fraction: 1.0,
            batch_size: 64,
            points_per_hand: 2048,
            surface_per_hand: 2000,
            surface_pool: 6000,
            presample: 100_000,
            noise_sigma: 3.0,
            steps: 100_000,
            eval_every: 1000,
            loss: LossKind::Mse,
            dropout: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A configuration that trains in minutes on one CPU core: few hands
    /// and points per step with points drawn directly from the oracle, a
    /// larger step size decaying along a cosine, and no dropout.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            final_lr_fraction: 0.1,
            batch_size: 4,
            points_per_hand: 512,
            surface_per_hand: 24,
            surface_pool: 0,
            presample: 0,
            steps: 12_000,
            eval_every: 1000,
            dropout: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return bad("final learning-rate fraction must be in (0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.lambda_skin >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("learning rate, lambda and sigma must be non-negative (learning rate positive)");
        }
        if self.batch_size == 0 || self.points_per_hand == 0 || self.eval_every == 0 {
            return bad("batch size, points per hand and eval interval must be positive");
        }
        Ok(())
    }
}

/// Pre-sampled supervision for one hand.
#[derive(Debug, Clone)]
pub struct SamplePool {
    pub uniform: LabeledPointSet,
    pub near: LabeledPointSet,
    pub surface: Vec<Vec3>,
    pub skin: Vec<[f64; NUM_PARTS]>,
}

impl SamplePool {
    pub fn generate<R: Rng + ?Sized>(hand: &CapsuleHand, cfg: &TrainConfig, rng: &mut R) -> Self {
        let uniform = sample_query_points(hand, cfg.presample, Strategy::UniformBox, rng);
        let near = sample_query_points(hand, cfg.presample, Strategy::Surface { sigma: cfg.noise_sigma }, rng);
        let surface: Vec<Vec3> = (0..cfg.surface_pool).map(|_| hand.sample_surface(rng)).collect();
        let skin = surface.iter().map(|p| hand.skinning_weights(p)).collect();
        SamplePool {
            uniform,
            near,
            surface,
            skin,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub hand: CapsuleHand,
    pub pool: Option<SamplePool>,
}

impl TrainSample {
    pub fn new(hand: CapsuleHand) -> Self {
        TrainSample { hand, pool: None }
    }
}

/// Held-out hand with uniform evaluation points.
#[derive(Debug, Clone)]
pub struct ValSample {
    pub hand: CapsuleHand,
    pub points: LabeledPointSet,
}

impl ValSample {
    pub fn generate(hand: CapsuleHand, n: usize, seed: u64) -> Self {
        let points = sample_query_points(&hand, n, Strategy::UniformBox, &mut ChaCha8Rng::seed_from_u64(seed));
        ValSample { hand, points }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub occupancy: f64,
    pub skinning: f64,
    /// Weight the skinning term had at this step (0 once latched off).
    pub lambda_skin: f64,
    pub total: f64,
    pub val_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    pub best_val_iou: f64,
    pub best_step: usize,
    /// Step at which the skinning term was switched off.
    pub skin_off_at: Option<usize>,
    pub final_loss: f64,
}

/// Mean per-hand IoU of the model's 0.5 level set against exact labels.
pub fn validation_iou(model: &HandOccupancyModel, val: &[ValSample]) -> Result<f64, Error> {
    let ious = par::map_slice(val, |v| -> Result<f64, Error> {
        let occ = model.query(&v.hand.skeleton, &v.points.points)?;
        let pred: Vec<bool> = occ.iter().map(|&o| o > 0.5).collect();
        let gt: Vec<bool> = v.points.labels.iter().map(|&l| l == 1).collect();
        Ok(crate::surface::iou_of_labels(&pred, &gt))
    });
    let mut sum = 0.0;
    for i in ious {
        sum += i?;
    }
    Ok(sum / val.len().max(1) as f64)
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Drawn {
    points: Vec<Vec3>,
    labels: Vec<u8>,
    surface: Vec<Vec3>,
    skin: Vec<[f64; NUM_PARTS]>,
}

fn draw(sample: &TrainSample, cfg: &TrainConfig, with_skin: bool, rng: &mut ChaCha8Rng) -> Drawn {
    let n = cfg.points_per_hand;
    let k = if with_skin { cfg.surface_per_hand } else { 0 };
    let hand = &sample.hand;
    match &sample.pool {
        Some(pool) => {
            let mut points = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let set = if rng.random::<bool>() { &pool.uniform } else { &pool.near };
                let i = rng.random_range(0..set.len());
                points.push(set.points[i]);
                labels.push(set.labels[i]);
            }
            let (mut surface, mut skin) = (Vec::with_capacity(k), Vec::with_capacity(k));
            for _ in 0..k.min(pool.surface.len()) {
                let i = rng.random_range(0..pool.surface.len());
                surface.push(pool.surface[i]);
                skin.push(pool.skin[i]);
            }
            Drawn {
                points,
                labels,
                surface,
                skin,
            }
        }
        None => {
            let half = n / 2;
            let mut a = sample_query_points(hand, half, Strategy::UniformBox, rng);
            let b = sample_query_points(hand, n - half, Strategy::Surface { sigma: cfg.noise_sigma }, rng);
            a.points.extend(b.points);
            a.labels.extend(b.labels);
            let surface: Vec<Vec3> = (0..k).map(|_| hand.sample_surface(rng)).collect();
            let skin = surface.iter().map(|p| hand.skinning_weights(p)).collect();
            Drawn {
                points: a.points,
                labels: a.labels,
                surface,
                skin,
            }
        }
    }
}

/// Cosine decay from the initial rate to `final_lr_fraction` of it.
pub fn learning_rate_at(cfg: &TrainConfig, step: usize) -> f64 {
    let t = if cfg.steps > 1 {
        (step.saturating_sub(1)) as f64 / (cfg.steps - 1) as f64
    } else {
        0.0
    };
    let f = cfg.final_lr_fraction;
    cfg.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Result of [`train`]: the best-validation model and the log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HandOccupancyModel,
    pub log: TrainLog,
}

/// Trains `model` with Adam on `L_o + λ L_s`, the skinning term latched off
/// once validation IoU reaches the cutoff. Evaluates every `eval_every`
/// steps and at the end; returns the parameters with the best validation
/// IoU. `progress` sees every log entry as it is produced.
pub fn train(
    mut model: HandOccupancyModel,
    train_set: &[TrainSample],
    val_set: &[ValSample],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&LogEntry),
) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation sets".into()));
    }
    if model.config() != &cfg.model {
        return Err(Error::Mismatch("model configuration differs from the training configuration".into()));
    }
    let n_params = model.num_params();
    let mut adam = Adam::new(n_params, cfg.learning_rate);
    let mut log = TrainLog {
        best_val_iou: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = model.params().to_vec();
    let mut skin_on = cfg.lambda_skin > 0.0;

    for step in 1..=cfg.steps {
        let lambda = if skin_on { cfg.lambda_skin } else { 0.0 };
        let mut pick = ChaCha8Rng::seed_from_u64(mix(cfg.seed, step as u64));
        let hands: Vec<usize> = (0..cfg.batch_size).map(|_| pick.random_range(0..train_set.len())).collect();
        let params: Vec<f32> = model.params().to_vec();
        let opts_for = |k: usize| LossOptions {
            lambda_skin: lambda,
            kind: cfg.loss,
            dropout_seed: cfg.dropout.then(|| mix(mix(cfg.seed, step as u64), k as u64 + 1)),
        };
        let results = par::map_range(hands.len(), |k| -> Result<(SampleLoss, Vec<f64>), Error> {
            let sample = &train_set[hands[k]];
            let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(cfg.seed ^ 0xda7a, step as u64), k as u64));
            let d = draw(sample, cfg, lambda > 0.0, &mut rng);
            let batch = SampleBatch {
                points: &d.points,
                labels: &d.labels,
                surface: &d.surface,
                skin: &d.skin,
            };
            let mut grad = vec![0.0; n_params];
            let l = model.loss_gradient(&params, &sample.hand.skeleton, &batch, &opts_for(k), &mut grad)?;
            Ok((l, grad))
        });
        let mut grad = vec![0.0; n_params];
        let mut mean = SampleLoss::default();
        let scale = 1.0 / hands.len() as f64;
        for r in results {
            let (l, g) = r.map_err(|e| match e {
                Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step, detail },
                other => other,
            })?;
            mean.occupancy += l.occupancy * scale;
            mean.skinning += l.skinning * scale;
            mean.total += l.total * scale;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b * scale;
            }
        }
        if !mean.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("mean loss {}", mean.total),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("gradient entry {i} is not finite"),
            });
        }
        adam.lr = learning_rate_at(cfg, step);
        adam.step(model.params_mut(), &grad);
        log.final_loss = mean.total;

        let eval = step % cfg.eval_every == 0 || step == cfg.steps;
        let val_iou = if eval { Some(validation_iou(&model, val_set)?) } else { None };
        if let Some(iou) = val_iou {
            if iou > log.best_val_iou {
                log.best_val_iou = iou;
                log.best_step = step;
                best.copy_from_slice(model.params());
            }
            if skin_on && iou >= cfg.skin_cutoff_iou {
                skin_on = false;
                log.skin_off_at = Some(step);
            }
        }
        if eval || step % 100 == 0 || step == 1 {
            let e = LogEntry {
                step,
                occupancy: mean.occupancy,
                skinning: mean.skinning,
                lambda_skin: lambda,
                total: mean.total,
                val_iou,
            };
            progress(&e);
            log.entries.push(e);
        }
    }
    if cfg.steps > 0 {
        model.params_mut().copy_from_slice(&best);
    } else {
        log.best_val_iou = validation_iou(&model, val_set)?;
    }
    Ok(TrainOutcome { model, log })
}
