//! Evaluation metrics: correlation-utility improvement, marginal JS distance and
//! inverse KL on binned marginals, and downstream logistic-regression F1.

mod logreg;

pub use logreg::{f1_score, train_logreg, LogisticRegression, TrainerOptions};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tabular::Dataset;

/// Pearson correlation of two columns; 0 when either is constant.
pub fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Symmetric `d × d` Pearson matrix. A constant column has an all-zero row and
/// column, its diagonal included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub values: Array2<f64>,
}

impl CorrelationMatrix {
    /// Entrywise `|self − other|`.
    pub fn misalignment(&self, other: &CorrelationMatrix) -> Array2<f64> {
        (&self.values - &other.values).mapv(f64::abs)
    }

    /// `‖self − other‖₁` over all entries.
    pub fn l1_distance(&self, other: &CorrelationMatrix) -> f64 {
        self.misalignment(other).sum()
    }

    /// CSV rows of `|self − other|` with a header of feature names.
    pub fn misalignment_csv(&self, other: &CorrelationMatrix, names: &[&str]) -> String {
        let m = self.misalignment(other);
        let mut out = String::from("feature");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in m.rows().into_iter().enumerate() {
            out.push_str(names.get(i).copied().unwrap_or(""));
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn correlation_matrix(data: &Dataset) -> Result<CorrelationMatrix> {
    if data.n() < 2 {
        return invalid("correlation needs at least two records");
    }
    let d = data.d();
    let recs = data.records();
    let mut values = Array2::zeros((d, d));
    let constant: Vec<bool> = (0..d)
        .map(|j| {
            let c = recs.column(j);
            c.iter().all(|&v| v == c[0])
        })
        .collect();
    for i in 0..d {
        if constant[i] {
            continue;
        }
        values[[i, i]] = 1.0;
        for j in i + 1..d {
            let r = pearson(recs.column(i), recs.column(j));
            values[[i, j]] = r;
            values[[j, i]] = r;
        }
    }
    Ok(CorrelationMatrix { values })
}

fn check_same_width(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch(format!(
            "datasets have {} and {} features",
            a.d(),
            b.d()
        )));
    }
    Ok(())
}

/// `‖corr(real) − corr(data)‖₁`
pub fn correlation_error(real: &Dataset, data: &Dataset) -> Result<f64> {
    check_same_width(real, data)?;
    Ok(correlation_matrix(real)?.l1_distance(&correlation_matrix(data)?))
}

/// `1 − error_corr(post) / error_corr(syn)`; ranges over `(−∞, 1]`.
pub fn utility_improvement(real: &Dataset, syn: &Dataset, post: &Dataset) -> Result<f64> {
    check_same_width(real, syn)?;
    check_same_width(real, post)?;
    let base = correlation_error(real, syn)?;
    if base == 0.0 {
        return Err(Error::UndefinedImprovement);
    }
    Ok(1.0 - correlation_error(real, post)? / base)
}

/// Equal-width histograms on `[0,1]`, one per feature; `1.0` falls in the last bin.
pub fn marginal_histograms(data: &Dataset, bins: usize) -> Result<Vec<Vec<f64>>> {
    if bins == 0 {
        return invalid("bins must be at least 1");
    }
    let n = data.n() as f64;
    Ok(data
        .records()
        .columns()
        .into_iter()
        .map(|col| {
            let mut h = vec![0.0; bins];
            for &v in col {
                let b = ((v * bins as f64).floor() as usize).min(bins - 1);
                h[b] += 1.0;
            }
            h.iter_mut().for_each(|c| *c /= n);
            h
        })
        .collect())
}

/// `sqrt(JSD)` with base-2 logarithms; 0 for identical and 1 for disjoint histograms.
pub fn js_distance_hist(p: &[f64], q: &[f64]) -> f64 {
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let jsd: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * term(a, m) + 0.5 * term(b, m)
        })
        .sum();
    jsd.clamp(0.0, 1.0).sqrt()
}

const KL_SMOOTHING: f64 = 1e-9;

/// `1 / (1 + KL(p ‖ q))` after adding `1e-9` to every bin of both histograms.
pub fn inverse_kl_hist(p: &[f64], q: &[f64]) -> f64 {
    let smooth = |h: &[f64]| {
        let z: f64 = h.iter().map(|x| x + KL_SMOOTHING).sum();
        h.iter().map(|x| (x + KL_SMOOTHING) / z).collect::<Vec<_>>()
    };
    let (p, q) = (smooth(p), smooth(q));
    let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    1.0 / (1.0 + kl.max(0.0))
}

fn per_marginal(
    real: &Dataset,
    other: &Dataset,
    bins: usize,
    f: fn(&[f64], &[f64]) -> f64,
) -> Result<Vec<f64>> {
    check_same_width(real, other)?;
    let hr = marginal_histograms(real, bins)?;
    let ho = marginal_histograms(other, bins)?;
    Ok(hr.iter().zip(&ho).map(|(a, b)| f(a, b)).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-feature JS distances between binned marginals.
pub fn js_distances(real: &Dataset, other: &Dataset, bins: usize) -> Result<Vec<f64>> {
    per_marginal(real, other, bins, js_distance_hist)
}

/// Average JS distance over features.
pub fn js_distance(real: &Dataset, other: &Dataset, bins: usize) -> Result<f64> {
    Ok(mean(&js_distances(real, other, bins)?))
}

pub fn inverse_kls(real: &Dataset, other: &Dataset, bins: usize) -> Result<Vec<f64>> {
    per_marginal(real, other, bins, inverse_kl_hist)
}

/// Average inverse KL over features.
pub fn inverse_kl(real: &Dataset, other: &Dataset, bins: usize) -> Result<f64> {
    Ok(mean(&inverse_kls(real, other, bins)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub bins: usize,
    pub trainer: TrainerOptions,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            bins: 20,
            trainer: TrainerOptions::default(),
        }
    }
}

/// Statistical and downstream scores of one dataset against the real data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScores {
    pub error_corr: f64,
    pub js_distance_avg: f64,
    pub inverse_kl_avg: f64,
    pub f1: Option<f64>,
    pub js_per_marginal: Vec<f64>,
    pub inverse_kl_per_marginal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` when the synthetic correlations already match the real ones exactly.
    pub utility_improvement: Option<f64>,
    pub syn: DatasetScores,
    pub post: DatasetScores,
}

fn scores(
    real: &Dataset,
    f1_test: Option<&Dataset>,
    data: &Dataset,
    opts: &MetricOptions,
) -> Result<DatasetScores> {
    let js = js_distances(real, data, opts.bins)?;
    let ikl = inverse_kls(real, data, opts.bins)?;
    let f1 = match (data.target_index(), f1_test) {
        (Some(t), Some(test)) => {
            let clf = train_logreg(data, t, &opts.trainer)?;
            Some(f1_score(&clf, test, t)?)
        }
        _ => None,
    };
    Ok(DatasetScores {
        error_corr: correlation_error(real, data)?,
        js_distance_avg: mean(&js),
        inverse_kl_avg: mean(&ikl),
        f1,
        js_per_marginal: js,
        inverse_kl_per_marginal: ikl,
    })
}

/// Full report for `syn` and `post` against `real`. F1 scores are computed when
/// the datasets carry a target, with classifiers evaluated on `f1_test`
/// (falling back to `real`).
pub fn evaluate(
    real: &Dataset,
    f1_test: Option<&Dataset>,
    syn: &Dataset,
    post: &Dataset,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    check_same_width(real, syn)?;
    check_same_width(real, post)?;
    let test = f1_test.or(Some(real));
    let s = scores(real, test, syn, opts)?;
    let p = scores(real, test, post, opts)?;
    let utility_improvement = match utility_improvement(real, syn, post) {
        Ok(u) => Some(u),
        Err(Error::UndefinedImprovement) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        utility_improvement,
        syn: s,
        post: p,
    })
}
