//! Dual solver for the KL information projection.
//!
//! The projection of `P_syn` onto `{P : |q_k(P) − a_k| ≤ γ ∀k}` is the tilt
//! `P_syn(x)·exp(−λ·q̄(x))` where `q̄(x) = q(x) − a` and `λ` minimizes
//!
//! ```text
//! f(λ) + γ‖λ‖₁,    f(λ) = log E_syn[exp(−λ·q̄(X))].
//! ```
//!
//! [`fit_dual`] runs a stochastic compositional proximal gradient method: the
//! numerator `E[exp(−λ·q̄)·q̄]` of `−∇f` is estimated on the current mini-batch
//! and divided by a running estimate `τ` of the denominator `E[exp(−λ·q̄)]`
//! taken on the previous batch, followed by soft-thresholding. All exponent sums
//! are shifted by their maximum, and `τ` is carried as `log τ`, so that the ratio
//! never overflows.

pub mod oracle;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::tabular::{Dataset, SupportDistribution};
use crate::workload::{query_matrix, AnswerVector, QueryMatrix, QueryWorkload};

/// Rows `q̄_i = q(x_i) − a*` with per-row weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredQueries {
    qbar: Array2<f64>,
    weights: Vec<f64>,
}

impl CenteredQueries {
    /// Uniform row weights `1/n`.
    pub fn uniform(qbar: Array2<f64>) -> Result<Self> {
        let n = qbar.nrows();
        if n == 0 || qbar.ncols() == 0 {
            return invalid("centered query matrix must be non-empty");
        }
        Ok(CenteredQueries {
            qbar,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Arbitrary positive row weights (normalized here).
    pub fn weighted(qbar: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        if qbar.nrows() == 0 || qbar.ncols() == 0 {
            return invalid("centered query matrix must be non-empty");
        }
        if weights.len() != qbar.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                weights.len(),
                qbar.nrows()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return invalid("row weights must be positive and finite");
        }
        let z: f64 = weights.iter().sum();
        Ok(CenteredQueries {
            qbar,
            weights: weights.into_iter().map(|w| w / z).collect(),
        })
    }

    /// One row per synthetic record, uniformly weighted; duplicates carry their
    /// multiplicity automatically.
    pub fn from_records(w: &QueryWorkload, data: &Dataset, answers: &AnswerVector) -> Result<Self> {
        check_answers(w.len(), answers)?;
        if let Some(&f) = w.features().last() {
            if f >= data.d() {
                return Err(Error::DimensionMismatch(format!(
                    "workload references feature {f} but data has d={}",
                    data.d()
                )));
            }
        }
        let mut qbar = Array2::zeros((data.n(), w.len()));
        for (i, row) in data.records().rows().into_iter().enumerate() {
            for (k, q) in w.queries().iter().enumerate() {
                qbar[[i, k]] = q.eval(row) - answers.values[k];
            }
        }
        Self::uniform(qbar)
    }

    /// One row per support point, weighted by its empirical probability.
    pub fn from_support(
        w: &QueryWorkload,
        supp: &SupportDistribution,
        answers: &AnswerVector,
    ) -> Result<Self> {
        check_answers(w.len(), answers)?;
        let qm = query_matrix(w, supp)?;
        Self::from_query_matrix(&qm, &supp.probs, answers)
    }

    pub fn from_query_matrix(
        qm: &QueryMatrix,
        probs: &[f64],
        answers: &AnswerVector,
    ) -> Result<Self> {
        check_answers(qm.num_queries(), answers)?;
        let mut qbar = qm.values.t().to_owned();
        for mut row in qbar.rows_mut() {
            row.iter_mut()
                .zip(&answers.values)
                .for_each(|(x, a)| *x -= a);
        }
        Self::weighted(qbar, probs.to_vec())
    }

    pub fn n(&self) -> usize {
        self.qbar.nrows()
    }

    pub fn k(&self) -> usize {
        self.qbar.ncols()
    }

    pub fn qbar(&self) -> &Array2<f64> {
        &self.qbar
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.qbar.row(i)
    }

    /// Exponent `−λ·q̄_i`.
    #[inline]
    pub fn exponent(&self, i: usize, lambda: &[f64]) -> f64 {
        -self
            .qbar
            .row(i)
            .iter()
            .zip(lambda)
            .map(|(q, l)| q * l)
            .sum::<f64>()
    }
}

fn check_answers(k: usize, answers: &AnswerVector) -> Result<()> {
    if answers.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "workload has {k} queries but {} answers were given",
            answers.len()
        )));
    }
    Ok(())
}

fn check_lambda(cq: &CenteredQueries, lambda: &[f64]) -> Result<()> {
    if lambda.len() != cq.k() {
        return Err(Error::DimensionMismatch(format!(
            "lambda has {} entries, expected {}",
            lambda.len(),
            cq.k()
        )));
    }
    Ok(())
}

/// Shifted sums over `rows`: returns `(max exponent, Σ w e^{z−m}, Σ w e^{z−m} q̄, Σ w)`.
fn shifted_moments(
    cq: &CenteredQueries,
    lambda: &[f64],
    rows: &[usize],
    with_num: bool,
) -> (f64, f64, Vec<f64>, f64) {
    let z: Vec<f64> = rows.iter().map(|&i| cq.exponent(i, lambda)).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut den = 0.0;
    let mut wsum = 0.0;
    let mut num = vec![0.0; if with_num { cq.k() } else { 0 }];
    for (&i, &zi) in rows.iter().zip(&z) {
        let w = cq.weights[i];
        let e = w * (zi - m).exp();
        den += e;
        wsum += w;
        if with_num {
            for (nj, q) in num.iter_mut().zip(cq.qbar.row(i)) {
                *nj += e * q;
            }
        }
    }
    (m, den, num, wsum)
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// `f(λ) + γ‖λ‖₁`, with `f` by log-sum-exp over all rows.
pub fn dual_objective(lambda: &[f64], cq: &CenteredQueries, gamma: f64) -> Result<f64> {
    check_lambda(cq, lambda)?;
    let (m, den, _, _) = shifted_moments(cq, lambda, &all_rows(cq.n()), false);
    Ok(m + den.ln() + gamma * lambda.iter().map(|l| l.abs()).sum::<f64>())
}

/// Exact gradient of `f` (without the `γ‖λ‖₁` term):
/// `∂f/∂λ_j = −E[e^{−λ·q̄} q̄_j] / E[e^{−λ·q̄}]`.
pub fn dual_gradient_full(lambda: &[f64], cq: &CenteredQueries) -> Result<Vec<f64>> {
    check_lambda(cq, lambda)?;
    let (_, den, num, _) = shifted_moments(cq, lambda, &all_rows(cq.n()), true);
    Ok(num.into_iter().map(|x| -x / den).collect())
}

/// `sign(x)·max(|x| − α, 0)`
#[inline]
pub fn soft_threshold(x: f64, alpha: f64) -> f64 {
    debug_assert!(alpha >= 0.0);
    x.signum() * (x.abs() - alpha).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDecay {
    Constant,
    /// `α_t = α / √t`
    InvSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub decay: StepDecay,
    pub seed: u64,
    pub full_batch: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            gamma: 1e-5,
            epochs: 200,
            batch_size: 256,
            step_size: 0.1,
            decay: StepDecay::Constant,
            seed: 0,
            full_batch: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma {} must be >= 0", self.gamma));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return invalid(format!("step size {} must be positive", self.step_size));
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if !self.full_batch && (self.batch_size == 0 || self.batch_size > n) {
            return invalid(format!(
                "batch size {} must lie in [1, {n}]",
                self.batch_size
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    pub final_tau: f64,
    pub epochs_run: usize,
    /// Full-data objective `f(λ) + γ‖λ‖₁` after each epoch.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub config: OptimizerConfig,
}

const CONVERGENCE_EPOCHS: usize = 5;
const CONVERGENCE_TOL: f64 = 1e-8;

/// Runs the stochastic compositional proximal gradient method from `λ = 0, τ = 1`.
pub fn fit_dual(cq: &CenteredQueries, cfg: &OptimizerConfig) -> Result<DualSolution> {
    let n = cq.n();
    cfg.validate(n)?;
    let k = cq.k();
    let mut lambda = vec![0.0; k];
    let mut log_tau = 0.0f64;
    let mut order: Vec<usize> = all_rows(n);
    let mut rng = rng::seeded(cfg.seed);
    let batch = if cfg.full_batch { n } else { cfg.batch_size };
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut t = 0usize;

    for epoch in 0..cfg.epochs {
        if !cfg.full_batch {
            order.shuffle(&mut rng);
        }
        for rows in order.chunks(batch) {
            t += 1;
            let alpha = match cfg.decay {
                StepDecay::Constant => cfg.step_size,
                StepDecay::InvSqrt => cfg.step_size / (t as f64).sqrt(),
            };
            let (m, _, num, wsum) = shifted_moments(cq, &lambda, rows, true);
            // (1/|B|) Σ e^{z} q̄ / τ  =  e^{m − log τ} · (Σ w e^{z−m} q̄ / Σ w)
            let scale = (m - log_tau).exp() / wsum;
            for (l, nj) in lambda.iter_mut().zip(&num) {
                *l = soft_threshold(*l + alpha * scale * nj, alpha * cfg.gamma);
            }
            let (m2, den2, _, wsum2) = shifted_moments(cq, &lambda, rows, false);
            log_tau = m2 + (den2 / wsum2).ln();
            if !log_tau.is_finite() || lambda.iter().any(|l| !l.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "dual iterate diverged at epoch {epoch}, step {t} (step size {} too large?)",
                    cfg.step_size
                )));
            }
        }
        let obj = dual_objective(&lambda, cq, cfg.gamma)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite(format!(
                "dual objective is {obj} after epoch {epoch}; lambda = {lambda:?}"
            )));
        }
        trace.push(obj);
    }

    let converged = trace.len() > CONVERGENCE_EPOCHS && {
        let tail = &trace[trace.len() - CONVERGENCE_EPOCHS - 1..];
        let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo < CONVERGENCE_TOL
    };
    Ok(DualSolution {
        lambda,
        final_tau: log_tau.exp(),
        epochs_run: cfg.epochs,
        objective_trace: trace,
        converged,
        config: cfg.clone(),
    })
}
