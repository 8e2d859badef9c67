//! Hand-object interaction: interpenetration, translation refinement,
//! voxel metrics and angle losses.

mod angles;
mod object;
mod penetration;
mod voxel;

pub use angles::{angle_losses, angle_losses_generic, bone_length_loss, bone_length_loss_generic, AngleLosses};
pub use object::{sample_object_interior, InteriorSamples, ObjectShape};
pub use penetration::{
    check_interpenetration_gradient, interpenetration_gradient, interpenetration_loss, interpenetration_loss_gated, refine_translation, Gate,
    PenetrationGradient, RefineConfig, Refinement,
};
pub use voxel::{interpenetration_volume, Penetration};

/// Interior points per scene unless configured otherwise.
pub const DEFAULT_INTERIOR_POINTS: usize = 2048;

#[cfg(test)]
mod tests;
