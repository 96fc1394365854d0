//! Maximum-likelihood fits and approximate posterior draws for the normal
//! linear, logistic and Cox models.

mod cox;
mod hazard;
mod linear;
mod logistic;
mod newton;

pub use cox::{breslow_baseline, cox_loglik, cox_score, draw_cox_posterior, fit_cox, CoxFit};
pub use hazard::{breslow_from_eta, nelson_aalen, StepCumHazard};
pub use linear::{draw_linear_posterior, fit_linear, LinearFit};
pub use logistic::{draw_glm_posterior, fit_logistic, logistic_loglik, logistic_score, GlmFit};
pub use newton::{DIVERGENCE, MAX_ITER, SCORE_TOL};
