//! Moment-query workloads.
//!
//! The correlation matrix of a table depends only on its first and second moments,
//! so aligning `{x_i} ∪ {x_i x_j : i ≤ j}` over `m` features (`K = (m+3)m/2`
//! queries) aligns the correlations among those features.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evaluator::pearson;
use crate::tabular::{Dataset, SupportDistribution};

/// A scalar query over one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    /// `q(x) = x_i`
    FirstMoment { i: usize },
    /// `q(x) = x_i · x_j`, `i ≤ j`
    SecondMoment { i: usize, j: usize },
}

impl Query {
    #[inline]
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        match *self {
            Query::FirstMoment { i } => x[i],
            Query::SecondMoment { i, j } => x[i] * x[j],
        }
    }

    /// `sup |q(x) - q(x')|` over `[0,1]^d`.
    pub fn range_width(&self) -> f64 {
        1.0
    }

    fn max_index(&self) -> usize {
        match *self {
            Query::FirstMoment { i } => i,
            Query::SecondMoment { i, j } => i.max(j),
        }
    }
}

/// An ordered list of queries. Serialized as a bare JSON list of `{kind, i, j?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Query>", into = "Vec<Query>")]
pub struct QueryWorkload {
    queries: Vec<Query>,
}

impl TryFrom<Vec<Query>> for QueryWorkload {
    type Error = Error;

    fn try_from(queries: Vec<Query>) -> Result<Self> {
        QueryWorkload::new(queries)
    }
}

impl From<QueryWorkload> for Vec<Query> {
    fn from(w: QueryWorkload) -> Self {
        w.queries
    }
}

impl QueryWorkload {
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        if queries.is_empty() {
            return invalid("workload needs at least one query");
        }
        if let Some(q) = queries
            .iter()
            .find(|q| matches!(q, Query::SecondMoment { i, j } if i > j))
        {
            return invalid(format!("second-moment query {q:?} must have i <= j"));
        }
        Ok(QueryWorkload { queries })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Sorted feature indices the workload touches.
    pub fn features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .queries
            .iter()
            .flat_map(|q| match *q {
                Query::FirstMoment { i } => vec![i],
                Query::SecondMoment { i, j } => vec![i, j],
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    pub fn range_widths(&self) -> Vec<f64> {
        self.queries.iter().map(Query::range_width).collect()
    }

    fn check_width(&self, d: usize) -> Result<()> {
        let need = self.queries.iter().map(Query::max_index).max().unwrap_or(0);
        if need >= d {
            return Err(Error::DimensionMismatch(format!(
                "workload references feature {need} but data has d={d}"
            )));
        }
        Ok(())
    }
}

/// Where an answer vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Noisy,
    Denoised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerVector {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl AnswerVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `Q[k, s] = q_k(x_s)` over the support points.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMatrix {
    pub values: Array2<f64>,
}

impl QueryMatrix {
    pub fn num_queries(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_support(&self) -> usize {
        self.values.ncols()
    }

    /// `Q · p`
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(p).map(|(q, p)| q * p).sum())
            .collect()
    }
}

/// Target plus the `m - 1` features most correlated (in absolute value) with it on
/// `syn`. Ties go to the lower index; `m` is clamped to `d`.
pub fn select_features(syn: &Dataset, target: usize, m: usize) -> Result<Vec<usize>> {
    let d = syn.d();
    if target >= d {
        return invalid(format!("target index {target} out of range for d={d}"));
    }
    if m == 0 {
        return invalid("feature count must be at least 1");
    }
    let m = m.min(d);
    let recs = syn.records();
    let t = recs.column(target);
    let mut scored: Vec<(usize, f64)> = (0..d)
        .filter(|&j| j != target)
        .map(|j| (j, pearson(recs.column(j), t).abs()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = vec![target];
    out.extend(scored.into_iter().take(m - 1).map(|(j, _)| j));
    Ok(out)
}

/// All first moments (by ascending index), then all pairs `i ≤ j` in lexicographic order.
pub fn build_moment_workload(features: &[usize]) -> Result<QueryWorkload> {
    if features.is_empty() {
        return invalid("feature set is empty");
    }
    let mut f = features.to_vec();
    f.sort_unstable();
    f.dedup();
    let mut queries: Vec<Query> = f.iter().map(|&i| Query::FirstMoment { i }).collect();
    for (a, &i) in f.iter().enumerate() {
        for &j in &f[a..] {
            queries.push(Query::SecondMoment { i, j });
        }
    }
    QueryWorkload::new(queries)
}

/// Exact empirical means `q_k(D) = (1/n) Σ_i q_k(x_i)`.
pub fn evaluate_queries(w: &QueryWorkload, data: &Dataset) -> Result<AnswerVector> {
    if data.n() == 0 {
        return Err(Error::EmptyTable);
    }
    w.check_width(data.d())?;
    let n = data.n() as f64;
    let mut sums = vec![0.0; w.len()];
    for row in data.records().rows() {
        for (s, q) in sums.iter_mut().zip(&w.queries) {
            *s += q.eval(row);
        }
    }
    Ok(AnswerVector {
        values: sums.into_iter().map(|s| s / n).collect(),
        provenance: Provenance::Exact,
    })
}

/// `q_k(P) = E_{X~P}[q_k(X)]` for a support distribution.
pub fn evaluate_on_distribution(
    w: &QueryWorkload,
    supp: &SupportDistribution,
) -> Result<AnswerVector> {
    if supp.is_empty() {
        return Err(Error::EmptyTable);
    }
    let qm = query_matrix(w, supp)?;
    Ok(AnswerVector {
        values: qm.apply(&supp.probs),
        provenance: Provenance::Exact,
    })
}

pub fn query_matrix(w: &QueryWorkload, supp: &SupportDistribution) -> Result<QueryMatrix> {
    w.check_width(supp.support.ncols())?;
    let s = supp.support.nrows();
    let mut values = Array2::zeros((w.len(), s));
    for (col, x) in supp.support.rows().into_iter().enumerate() {
        for (k, q) in w.queries.iter().enumerate() {
            values[[k, col]] = q.eval(x);
        }
    }
    Ok(QueryMatrix { values })
}

/// Upper bound on the `L_p` sensitivity of the workload's mean answers:
/// `(1/n) (Σ_k Δ(q_k)^p)^{1/p}`.
pub fn sensitivity(w: &QueryWorkload, n: usize, p: u32) -> Result<f64> {
    if n == 0 {
        return invalid("sensitivity needs n >= 1");
    }
    let widths = w.range_widths();
    let norm = match p {
        1 => widths.iter().sum::<f64>(),
        2 => widths.iter().map(|x| x * x).sum::<f64>().sqrt(),
        _ => return invalid(format!("sensitivity norm p={p} must be 1 or 2")),
    };
    Ok(norm / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::support;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn workload_sizes() {
        assert_eq!(build_moment_workload(&[0, 1, 2, 3, 4]).unwrap().len(), 20);
        assert_eq!(build_moment_workload(&[3]).unwrap().len(), 2);
        assert_eq!(
            build_moment_workload(&(0..10).collect::<Vec<_>>())
                .unwrap()
                .len(),
            65
        );
        assert!(build_moment_workload(&[]).is_err());
    }

    #[test]
    fn workload_ordering() {
        let w = build_moment_workload(&[2, 0]).unwrap();
        assert_eq!(
            w.queries(),
            &[
                Query::FirstMoment { i: 0 },
                Query::FirstMoment { i: 2 },
                Query::SecondMoment { i: 0, j: 0 },
                Query::SecondMoment { i: 0, j: 2 },
                Query::SecondMoment { i: 2, j: 2 },
            ]
        );
        assert_eq!(w.features(), vec![0, 2]);
    }

    #[test]
    fn workload_json_shape() {
        let w = build_moment_workload(&[0]).unwrap();
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(
            json,
            r#"[{"kind":"first_moment","i":0},{"kind":"second_moment","i":0,"j":0}]"#
        );
        let back: QueryWorkload = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
        assert!(
            serde_json::from_str::<QueryWorkload>(r#"[{"kind":"second_moment","i":2,"j":1}]"#)
                .is_err()
        );
    }

    #[test]
    fn evaluate_means() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let w = QueryWorkload::new(vec![Query::FirstMoment { i: 0 }]).unwrap();
        assert_eq!(evaluate_queries(&w, &ds).unwrap().values, vec![0.5]);

        let ds = Dataset::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let w = QueryWorkload::new(vec![Query::SecondMoment { i: 0, j: 1 }]).unwrap();
        let a = evaluate_queries(&w, &ds).unwrap();
        assert_eq!(a.values, vec![0.5]);
        assert_eq!(a.provenance, Provenance::Exact);
    }

    #[test]
    fn query_matrix_layout() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let w = QueryWorkload::new(vec![Query::FirstMoment { i: 0 }]).unwrap();
        let qm = query_matrix(&w, &support(&ds).unwrap()).unwrap();
        assert_eq!(qm.values, array![[0.0, 1.0]]);

        let ds = Dataset::from_rows(&[vec![0.5, 1.0]]).unwrap();
        let w = QueryWorkload::new(vec![
            Query::FirstMoment { i: 0 },
            Query::FirstMoment { i: 1 },
            Query::SecondMoment { i: 0, j: 1 },
        ])
        .unwrap();
        let qm = query_matrix(&w, &support(&ds).unwrap()).unwrap();
        assert_eq!(qm.values.column(0).to_vec(), vec![0.5, 1.0, 0.5]);

        let w = QueryWorkload::new(vec![Query::FirstMoment { i: 3 }]).unwrap();
        assert!(matches!(
            query_matrix(&w, &support(&ds).unwrap()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn sensitivity_bounds() {
        let w = build_moment_workload(&[0, 1, 2, 3, 4]).unwrap();
        assert!((sensitivity(&w, 100, 1).unwrap() - 0.2).abs() < 1e-15);
        assert!((sensitivity(&w, 100, 2).unwrap() - 20f64.sqrt() / 100.0).abs() < 1e-15);
        assert!(sensitivity(&w, 100, 3).is_err());
        // matches (d+3)d/(2n) and sqrt((d+3)d)/(sqrt(2) n) for the full workload
        let d = 5.0;
        assert!((sensitivity(&w, 7, 1).unwrap() - (d + 3.0) * d / 14.0).abs() < 1e-14);
        assert!(
            (sensitivity(&w, 7, 2).unwrap() - ((d + 3.0) * d).sqrt() / (2f64.sqrt() * 7.0)).abs()
                < 1e-14
        );
    }

    #[test]
    fn feature_selection_prefers_correlated() {
        // x1 duplicates the target, x2 is noise, x3 anti-correlated but weaker
        let rows = vec![
            vec![0.0, 0.0, 0.3, 0.9],
            vec![1.0, 1.0, 0.7, 0.2],
            vec![0.0, 0.0, 0.6, 0.6],
            vec![1.0, 1.0, 0.4, 0.3],
        ];
        let ds = Dataset::from_rows(&rows).unwrap();
        assert_eq!(select_features(&ds, 0, 3).unwrap(), vec![0, 1, 3]);
        assert_eq!(select_features(&ds, 0, 10).unwrap().len(), 4);
        assert!(select_features(&ds, 9, 2).is_err());
    }

    proptest! {
        #[test]
        fn dataset_and_support_answers_agree(
            cells in proptest::collection::vec(0u8..3, 3 * 30)
        ) {
            let rows: Vec<Vec<f64>> = cells.chunks(3).map(|c| c.iter().map(|&v| v as f64 / 2.0).collect()).collect();
            let ds = Dataset::from_rows(&rows).unwrap();
            let w = build_moment_workload(&[0, 1, 2]).unwrap();
            let direct = evaluate_queries(&w, &ds).unwrap();
            let via_support = evaluate_on_distribution(&w, &support(&ds).unwrap()).unwrap();
            for (a, b) in direct.values.iter().zip(&via_support.values) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }

        #[test]
        fn sensitivity_halves_when_n_doubles(m in 1usize..12, n in 1usize..10_000, p in 1u32..3) {
            let w = build_moment_workload(&(0..m).collect::<Vec<_>>()).unwrap();
            let a = sensitivity(&w, n, p).unwrap();
            let b = sensitivity(&w, 2 * n, p).unwrap();
            prop_assert!((a - 2.0 * b).abs() <= 1e-15 * a);
        }
    }
}
