//! Numerical laboratory for score-based generative models on semiconvex
//! targets.
//!
//! The pipeline is the usual one: an Ornstein–Uhlenbeck forward process
//! `dX = -X dt + sqrt(2) dB` pushes the data law towards `N(0, I)`, and the
//! time-reversed diffusion, driven by the score `∇ log p_t` (exact or a
//! fitted [`scorenet::ScoreModel`]), is integrated backwards with an
//! Euler–Maruyama scheme started at `N(0, I)`.
//!
//! Alongside the sampler the crate evaluates the explicit monotonicity
//! bounds for the score of semiconvex targets ([`convexity`]), the
//! Wasserstein-2 error bounds and their constants ([`bounds`]), and measures
//! the empirical W2 error of the generated samples ([`wasserstein`]).
//!
//! | module | contents |
//! |--------|----------|
//! | [`potentials`] | target families `exp(-U)`, subgradients, (K, μ, R), exact samplers |
//! | [`forward`] | OU marginals, closed-form mixture score, quadrature score oracle |
//! | [`convexity`] | `f_L`, `β_t`, `B(t,0,μ,K)`, `t̄`, `t*`, `R₀`, `μ̃`, empirical `κ_U` |
//! | [`sampler`] | backward Euler–Maruyama, auxiliary process, time grid |
//! | [`scorenet`] | random tanh-feature score model, least-squares fit, `ε_SN` |
//! | [`wasserstein`] | quantile, exact-assignment and Gaussian W2 |
//! | [`bounds`] | constants of the W2 error bounds and δ-thresholds |

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod convexity;
pub mod error;
pub mod forward;
pub mod numeric;
pub mod potentials;
pub mod rng;
pub mod sampler;
pub mod samples;
pub mod scorenet;
pub mod wasserstein;

pub use bounds::{BoundInputs, FullOrderTerms, HalfOrderTerms, Thresholds};
pub use convexity::ConvexityParams;
pub use error::{Error, Result};
pub use forward::{ExactScore, OuMarginal};
pub use potentials::{MixtureParams, Potential, PotentialConfig, SemiconvexityParams};
pub use sampler::{SamplerConfig, ScoreFn};
pub use samples::Samples;
pub use scorenet::ScoreModel;
pub use wasserstein::{W2Method, W2Report};
