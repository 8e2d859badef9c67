//! Interpenetration loss and translation refinement.
//!
//! All points are in the skeleton's frame (right-hand convention, as for
//! occupancy queries).

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::occupancy::{ActivationPattern, HandOccupancyModel};
use crate::diffcore::{check_gradient_rounded, GradCheck};
use crate::skeleton::{Handedness, Skeleton, NUM_JOINTS};
use crate::Error;

/// Sum of occupancy over the points where it exceeds 0.5.
pub fn interpenetration_loss(m: &HandOccupancyModel, s: &Skeleton, interior: &[Vec3]) -> Result<f64, Error> {
    if interior.is_empty() {
        return Ok(0.0);
    }
    Ok(m.query(s, interior)?.into_iter().filter(|&o| o > 0.5).sum())
}

/// The `> 0.5` gate and the network's activation pattern, held fixed so the
/// loss is a smooth function of the keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub mask: Vec<bool>,
    pub pattern: ActivationPattern,
}

#[derive(Debug, Clone)]
pub struct PenetrationGradient {
    pub loss: f64,
    /// d loss / d joint coordinates, 63 entries.
    pub joints: Vec<f64>,
    /// The gate the gradient was taken under.
    pub gate: Gate,
}

/// Loss and keypoint gradient. Without `gate`, the gate is taken at `s`.
pub fn interpenetration_gradient(
    m: &HandOccupancyModel,
    s: &Skeleton,
    interior: &[Vec3],
    gate: Option<&Gate>,
) -> Result<PenetrationGradient, Error> {
    if interior.is_empty() {
        return Ok(PenetrationGradient {
            loss: 0.0,
            joints: vec![0.0; 3 * NUM_JOINTS],
            gate: Gate {
                mask: vec![],
                pattern: ActivationPattern {
                    part: vec![],
                    signs: vec![],
                    layers: m.config().layers,
                },
            },
        });
    }
    let mut mask = gate.map(|g| g.mask.clone()).unwrap_or_default();
    let g = m.occupancy_gradient(s, interior, gate.map(|g| &g.pattern), |values| {
        if mask.is_empty() {
            mask = values.iter().map(|&o| o > 0.5).collect();
        }
        mask.iter().map(|&k| k as u8 as f64).collect()
    })?;
    let loss = g.values.iter().zip(&mask).filter(|(_, &k)| k).map(|(&o, _)| o).sum();
    Ok(PenetrationGradient {
        loss,
        joints: g.joints,
        gate: Gate {
            mask,
            pattern: g.pattern,
        },
    })
}

/// Checks the keypoint gradient of the loss against central differences
/// (step `h`, in mm) with the gate held fixed.
pub fn check_interpenetration_gradient(
    m: &HandOccupancyModel,
    s: &Skeleton,
    interior: &[Vec3],
    h: f64,
) -> Result<GradCheck, Error> {
    let g = interpenetration_gradient(m, s, interior, None)?;
    let f = |x: &[f64]| match Skeleton::from_flat(x, Handedness::Right) {
        Ok(sk) => interpenetration_loss_gated(m, &sk, interior, &g.gate).unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    };
    Ok(check_gradient_rounded(f, g.joints, &s.to_flat(), h, g.loss))
}

/// The loss with gate and activation pattern held fixed.
pub fn interpenetration_loss_gated(
    m: &HandOccupancyModel,
    s: &Skeleton,
    interior: &[Vec3],
    gate: &Gate,
) -> Result<f64, Error> {
    if interior.is_empty() {
        return Ok(0.0);
    }
    let values = m.query_frozen(s, interior, &gate.pattern)?;
    Ok(values.iter().zip(&gate.mask).filter(|(_, &k)| k).map(|(&o, _)| o).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub steps: usize,
    /// Translation per step along the normalized negative gradient (mm).
    pub step_mm: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { steps: 10, step_mm: 2.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub translation: Vec3,
    pub skeleton: Skeleton,
    /// Loss before each step and after the last one (`steps + 1` values).
    pub trace: Vec<f64>,
}

/// Gradient descent on a rigid translation of all keypoints. The gate is
/// re-evaluated at every step.
pub fn refine_translation(
    m: &HandOccupancyModel,
    s: &Skeleton,
    interior: &[Vec3],
    cfg: &RefineConfig,
) -> Result<Refinement, Error> {
    if !(cfg.step_mm > 0.0 && cfg.step_mm.is_finite()) {
        return Err(Error::Config("refinement step must be positive".into()));
    }
    let mut t = Vec3::zero();
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let g = interpenetration_gradient(m, &s.translated(t), interior, None)?;
        trace.push(g.loss);
        let mut d = Vec3::zero();
        for j in 0..NUM_JOINTS {
            d = d + Vec3::new(g.joints[3 * j], g.joints[3 * j + 1], g.joints[3 * j + 2]);
        }
        if !d.is_finite() || !g.loss.is_finite() {
            return Err(Error::NonFiniteGradient(step));
        }
        let n = d.norm();
        if n > 0.0 {
            t = t - d * (cfg.step_mm / n);
        }
    }
    let skeleton = s.translated(t);
    trace.push(interpenetration_loss(m, &skeleton, interior)?);
    Ok(Refinement {
        translation: t,
        skeleton,
        trace,
    })
}
