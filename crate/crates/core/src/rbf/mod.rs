//! Reflective beamforming: per-IRS successive convex approximation over the
//! lifted variable `Θ = ψψ^H`.

pub mod lift;
pub mod sca;

pub use lift::{
    linearized_power_constraint, lifted_fim, power_theta_form, q_gradients, q_terms, surrogate_affine,
    surrogate_fim, QGradients, ScaState,
};
pub use sca::{gaussian_randomize, initial_psi, sca_loop, solve_sdr, ScaOptions, ScaOutcome, SiteEval};
