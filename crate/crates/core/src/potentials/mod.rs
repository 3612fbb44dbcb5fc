//! Concrete constraint potentials.

mod muller_brown;
mod relational;
mod sampling;

pub use muller_brown::{
    locate_stationary_points, MullerBrownParams, MullerBrownPotential, StationaryKind, StationaryPoint,
    EXPONENT_CLAMP, WORKING_BOX,
};
pub use relational::{
    ConstraintDef, FeatureDef, RelationalConstraintSet, Schema, Term, CREDIT_SCHEMA,
};
pub use sampling::{sample_manifold_dataset, Sampler, MIN_ACCEPTANCE, STALL_WINDOW};

use crate::error::Result;
use crate::guidance::ConstraintPotential;
use crate::numerics::{finite_diff_grad, norm_inf};

/// Largest relative error between the analytic gradient and central
/// differences over `probes`, measured per probe as
/// `|g - g_fd|_inf / max(|g_fd|_inf, floor)`.
pub fn gradient_conformance(pot: &dyn ConstraintPotential, probes: &[Vec<f64>], floor: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in probes {
        let analytic = pot.gradient(p);
        let numeric = finite_diff_grad(|x| pot.value(x), p, None)?;
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        worst = worst.max(norm_inf(&diff) / norm_inf(&numeric).max(floor));
    }
    Ok(worst)
}
