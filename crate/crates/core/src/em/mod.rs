//! Reference EM solvers for mixtures of linear regressions.
//!
//! [`two`] is the symmetric two-component gradient EM, [`multi`] its
//! K-component generalization, [`batch`] the prompt-level batch EM, and
//! [`population`] the infinite-sample oracles used to test them.

pub mod batch;
pub mod multi;
pub mod population;
pub mod two;

pub use batch::{batch_em, batch_init, posterior_beta, BatchEmResult, BatchInit};
pub use multi::{gradient_em_step_multi, responsibilities, EmStateMulti};
pub use population::{adapted_basis, population_coords, population_em_update_mc, AdaptedBasis, McEstimate, PopCoords};
pub use two::{
    gradient_em_step_two, grad_q, q_loss, run_gradient_em_two, warm_start, weight_two, weights_two, EmStateTwo,
    Trajectory,
};

use crate::error::{Error, Result};

pub(crate) fn check_step(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("step size α = {alpha} outside (0, 1)")));
    }
    Ok(())
}

pub(crate) fn check_noise(theta: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("ϑ = {theta} must be positive")));
    }
    Ok(())
}
