//! Fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canonicalization::{pose_from_angles, AngleRanges};
use crate::geometry::{vec3, Mat3, Rigid};
use crate::skeleton::{BoneLengths, Skeleton};

pub fn random_hand(seed: u64) -> Skeleton {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = AngleRanges::default().sample(&mut rng);
    let scale = std::array::from_fn(|_| 0.8 + 0.4 * rng.random::<f64>());
    pose_from_angles(&BoneLengths::reference().scaled_per_finger(&scale), &a).unwrap()
}

pub fn random_motion(seed: u64) -> Rigid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let axis = vec3(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    Rigid {
        rot: Mat3::rotation(&axis, rng.random_range(-3.1..3.1)),
        trans: vec3(
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
        ),
    }
}

/// A model fitted to the capsule hand of `random_hand(11)`, trained once
/// per test binary.
pub fn fitted_model() -> &'static (crate::occupancy::HandOccupancyModel, crate::training::CapsuleHand) {
    use crate::occupancy::{HandOccupancyModel, OccupancyConfig};
    use crate::training::{train, CapsuleHand, TrainConfig, TrainSample, ValSample};
    static MODEL: std::sync::OnceLock<(HandOccupancyModel, CapsuleHand)> = std::sync::OnceLock::new();
    MODEL.get_or_init(|| {
        let hand = CapsuleHand::with_default_radii(random_hand(11));
        let cfg = TrainConfig {
            batch_size: 1,
            points_per_hand: 1024,
            steps: 800,
            eval_every: 200,
            ..TrainConfig::desk()
        };
        let model = HandOccupancyModel::init(OccupancyConfig::default(), 0).unwrap();
        let val = [ValSample::generate(hand.clone(), 5000, 1)];
        let out = train(model, &[TrainSample::new(hand.clone())], &val, &cfg, |_| {}).unwrap();
        (out.model, hand)
    })
}
