//! Standalone loss functions. The training loop uses the fused versions on
//! [`HandOccupancyModel`]; these are the reference forms.

use crate::geometry::Vec3;
use crate::occupancy::{HandOccupancyModel, NUM_PARTS, SKIN_TARGET};
use crate::skeleton::Skeleton;
use crate::Error;

fn check_len(expected: usize, got: usize) -> Result<(), Error> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, got })
    }
}

/// Mean squared error between occupancies and {0, 1} labels.
pub fn occupancy_loss(pred: &[f64], labels: &[u8]) -> Result<f64, Error> {
    check_len(pred.len(), labels.len())?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .iter()
        .zip(labels)
        .map(|(&p, &l)| (p - l as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// Gradient of [`occupancy_loss`] with respect to each prediction.
pub fn occupancy_loss_grad(pred: &[f64], labels: &[u8]) -> Result<Vec<f64>, Error> {
    check_len(pred.len(), labels.len())?;
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(labels).map(|(&p, &l)| 2.0 * (p - l as f64) / n).collect())
}

/// Mean over points of `Σ_b (o_b - SKIN_TARGET · w_b)²` from per-part
/// occupancies.
pub fn skinning_loss_from_parts(parts: &[[f64; NUM_PARTS]], weights: &[[f64; NUM_PARTS]]) -> Result<f64, Error> {
    check_len(parts.len(), weights.len())?;
    let n = parts.len().max(1) as f64;
    Ok(parts
        .iter()
        .zip(weights)
        .map(|(o, w)| o.iter().zip(w).map(|(a, b)| (a - SKIN_TARGET * b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n)
}

/// Skinning loss of a model on surface points of a posed hand.
pub fn skinning_loss(
    model: &HandOccupancyModel,
    s: &Skeleton,
    surface: &[Vec3],
    weights: &[[f64; NUM_PARTS]],
) -> Result<f64, Error> {
    check_len(surface.len(), weights.len())?;
    for w in weights {
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("skinning weights sum to {sum}, not 1")));
        }
    }
    skinning_loss_from_parts(&model.part_occupancies(s, surface)?, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy::{Mode, OccupancyConfig};
    use crate::testutil::random_hand;

    #[test]
    fn occupancy_loss_reference_values() {
        assert_eq!(occupancy_loss(&[1.0, 0.0], &[1, 0]).unwrap(), 0.0);
        assert_eq!(occupancy_loss(&[0.5; 4], &[1, 0, 0, 1]).unwrap(), 0.25);
        assert!(matches!(occupancy_loss(&[0.5], &[1, 0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn occupancy_gradient_matches_differences() {
        let pred = [0.1, 0.7, 0.45, 0.99];
        let labels = [0, 1, 1, 0];
        let g = occupancy_loss_grad(&pred, &labels).unwrap();
        let h = 1e-6;
        for i in 0..pred.len() {
            let mut a = pred;
            let mut b = pred;
            a[i] += h;
            b[i] -= h;
            let num = (occupancy_loss(&a, &labels).unwrap() - occupancy_loss(&b, &labels).unwrap()) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-6 * g[i].abs().max(1e-3));
        }
    }

    #[test]
    fn skinning_loss_zero_cases() {
        let half = |w: &[[f64; NUM_PARTS]]| -> Vec<[f64; NUM_PARTS]> { w.iter().map(|r| r.map(|v| 0.5 * v)).collect() };
        let w = [[1.0 / 16.0; NUM_PARTS]; 3];
        assert_eq!(skinning_loss_from_parts(&half(&w), &w).unwrap(), 0.0);
        let mut one_hot = [[0.0; NUM_PARTS]; 2];
        one_hot[0][3] = 1.0;
        one_hot[1][0] = 1.0;
        assert_eq!(skinning_loss_from_parts(&half(&one_hot), &one_hot).unwrap(), 0.0);
        assert_eq!(skinning_loss_from_parts(&one_hot, &one_hot).unwrap(), 0.25);
        // a zero model outputs 1/2 for every part: the owner is on target
        let m = HandOccupancyModel::zeros(OccupancyConfig::with_mode(Mode::HaloLocal)).unwrap();
        let s = random_hand(0);
        let pts = [s.joint(3), s.joint(7)];
        let l = skinning_loss(&m, &s, &pts, &one_hot).unwrap();
        assert!((l - 15.0 * 0.25).abs() < 1e-12);
        assert!(skinning_loss(&m, &s, &pts, &[[0.5; NUM_PARTS]; 2]).is_err());
    }
}
