//! Tilting weights and resampling of the synthetic records.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::projector::CenteredQueries;
use crate::rng;
use crate::tabular::Dataset;

/// Per-record resampling weights, `w_i ∝ ρ_i · exp(−λ·q̄_i)` where `ρ_i` is the
/// row weight of the centered queries (uniform for record-level rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleWeights {
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ResampleWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// SHA-256 over the little-endian bytes of the normalized weights.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn compute_weights(cq: &CenteredQueries, lambda: &[f64]) -> Result<ResampleWeights> {
    if lambda.len() != cq.k() {
        return Err(Error::DimensionMismatch(format!(
            "lambda has {} entries, expected {}",
            lambda.len(),
            cq.k()
        )));
    }
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite(format!("lambda {lambda:?}")));
    }
    let log_weights: Vec<f64> = (0..cq.n()).map(|i| cq.exponent(i, lambda)).collect();
    let shifted: Vec<f64> = log_weights
        .iter()
        .zip(cq.weights())
        .map(|(l, rho)| l + rho.ln())
        .collect();
    let m = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = shifted.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    Ok(ResampleWeights {
        log_weights,
        weights,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    #[default]
    Multinomial,
    Systematic,
}

/// Row indices drawn with replacement according to `weights`.
pub fn resample_indices(
    weights: &[f64],
    n_out: usize,
    seed: u64,
    method: ResampleMethod,
) -> Result<Vec<usize>> {
    if n_out == 0 {
        return invalid("n_out must be at least 1");
    }
    if weights.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    let last = weights.len() - 1;
    let locate = |u: f64| cdf.partition_point(|&c| c <= u).min(last);
    let mut rng = rng::seeded(seed);
    let out = match method {
        ResampleMethod::Multinomial => (0..n_out)
            .map(|_| locate(rng.gen::<f64>() * total))
            .collect(),
        ResampleMethod::Systematic => {
            let u0: f64 = rng.gen::<f64>();
            (0..n_out)
                .map(|k| locate((u0 + k as f64) / n_out as f64 * total))
                .collect()
        }
    };
    Ok(out)
}

/// Draws `n_out` copies of input rows; values are never altered.
pub fn resample(
    syn: &Dataset,
    w: &ResampleWeights,
    n_out: usize,
    seed: u64,
    method: ResampleMethod,
) -> Result<Dataset> {
    if w.len() != syn.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} records",
            w.len(),
            syn.n()
        )));
    }
    let idx = resample_indices(&w.weights, n_out, seed, method)?;
    syn.select_rows(&idx)
}
