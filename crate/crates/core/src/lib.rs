//! Utility-aware post-processing for differentially private synthetic tabular data.
//!
//! A synthetic dataset produced by any private generator is reweighted so that a
//! chosen set of moment queries matches noisy answers measured on the real data.
//! The reweighting is the KL information projection of the synthetic empirical
//! distribution onto the set of distributions whose query answers lie within `γ`
//! of the targets. Its solution is an exponential tilt
//!
//! ```text
//! P_post(x) ∝ P_syn(x) · exp(-Σ_k λ_k (q_k(x) - a_k))
//! ```
//!
//! where `λ` minimizes the convex dual `log E_syn[exp(-λ·(q(X) - a))] + γ‖λ‖₁`.
//!
//! The crate is organized along the pipeline:
//!
//! - [`tabular`]: CSV loading, `[0,1]` preprocessing, train/test splits, support extraction.
//! - [`workload`]: first/second moment queries, query matrices and sensitivities.
//! - [`mechanisms`]: Laplace and Gaussian mechanisms, tight Gaussian calibration, accounting.
//! - [`denoiser`]: projection of noisy answers onto the answers achievable on the synthetic support.
//! - [`projector`]: the dual solver (stochastic compositional proximal gradient) and a primal oracle.
//! - [`resampler`]: tilting weights and resampling.
//! - [`evaluator`]: correlation utility, marginal JS / inverse KL, logistic-regression F1.
//! - [`pipeline`]: configuration, stage orchestration and JSON artifacts used by the CLI.
//!
//! ```
//! use synthtilt::projector::{fit_dual, CenteredQueries, OptimizerConfig};
//! use synthtilt::resampler::compute_weights;
//!
//! // One query q(x) = x on support {0, 1} with P_syn = (0.9, 0.1), target answer 0.5.
//! let cq = CenteredQueries::weighted(
//!     ndarray::array![[-0.5], [0.5]],
//!     vec![0.9, 0.1],
//! ).unwrap();
//! let cfg = OptimizerConfig { gamma: 0.0, epochs: 3000, step_size: 1.0, full_batch: true, ..Default::default() };
//! let sol = fit_dual(&cq, &cfg).unwrap();
//! assert!((sol.lambda[0] + 9f64.ln()).abs() < 1e-6);
//! let w = compute_weights(&cq, &sol.lambda).unwrap();
//! assert!((w.weights[0] - 0.5).abs() < 1e-6);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoiser;
pub mod error;
pub mod evaluator;
pub mod mechanisms;
pub mod pipeline;
pub mod projector;
pub mod resampler;
mod rng;
pub mod tabular;
pub mod workload;

pub use error::{Error, Result};
