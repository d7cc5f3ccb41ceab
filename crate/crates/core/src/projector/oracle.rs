//! Direct primal solver for small projection instances.
//!
//! Minimizes `KL(p ‖ π)` over the simplex subject to `|Q_k p − a_k| ≤ γ`
//! without going through the dual. Every constraint is either inactive or
//! tight at one of its two bounds, so the solver enumerates all `3^K` such
//! patterns (one when `γ = 0`), solves each equality-constrained problem by an
//! infeasible-start Newton method on `p`, and keeps the feasible candidate of
//! least KL. The pattern of the true optimum is among those tried, and every
//! other feasible candidate is an upper bound, so the result is exact up to
//! the Newton tolerance. Intended for checking the dual route on small supports.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::workload::{AnswerVector, QueryMatrix};

pub const MAX_ORACLE_SUPPORT: usize = 50;
pub const MAX_ORACLE_QUERIES: usize = 8;

const NEWTON_ITERS: usize = 200;
const FEASIBILITY_TOL: f64 = 1e-9;

/// KL divergence `Σ p log(p/q)`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Largest constraint violation `max_k (|Q_k p − a_k| − γ)⁺`.
pub fn max_violation(q: &QueryMatrix, p: &[f64], a: &[f64], gamma: f64) -> f64 {
    q.apply(p)
        .iter()
        .zip(a)
        .map(|(x, y)| ((x - y).abs() - gamma).max(0.0))
        .fold(0.0, f64::max)
}

fn residual_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    log_prior: &DVector<f64>,
    p: &DVector<f64>,
    nu: &DVector<f64>,
) -> (f64, f64) {
    let grad = p.map(f64::ln) - log_prior + a.transpose() * nu;
    let primal = a * p - b;
    (grad.norm(), primal.norm())
}

/// `min KL(p ‖ π)` s.t. `A p = b`, where the last row of `A` is all ones.
/// Returns `None` when Newton fails to reach a strictly positive solution.
fn solve_equality(a: &DMatrix<f64>, b: &DVector<f64>, prior: &[f64]) -> Option<Vec<f64>> {
    let log_prior = DVector::from_iterator(prior.len(), prior.iter().map(|x| x.ln()));
    let mut p = DVector::from_column_slice(prior);
    let mut nu = DVector::zeros(a.nrows());
    for _ in 0..NEWTON_ITERS {
        let (rd, rp) = residual_norm(a, b, &log_prior, &p, &nu);
        if rd < 1e-11 && rp < 1e-13 {
            return Some(p.as_slice().to_vec());
        }
        // KKT with H = diag(1/p): eliminate Δp = −D(r_d + Aᵀ Δν), D = diag(p)
        let r_dual = p.map(f64::ln) - &log_prior + a.transpose() * &nu;
        let r_primal = a * &p - b;
        let ad = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * p[j]);
        let schur = &ad * a.transpose();
        let rhs = &r_primal - &ad * &r_dual;
        let dnu = schur.svd(true, true).solve(&rhs, 1e-14).ok()?;
        // Δp = −p ⊙ w; applied multiplicatively so p stays positive at any step length
        let w = r_dual + a.transpose() * &dnu;

        let current = (rd * rd + rp * rp).sqrt();
        let mut t = 1.0;
        loop {
            let np = DVector::from_fn(p.len(), |i, _| p[i] * (-t * w[i]).exp());
            let nn = &nu + &dnu * t;
            let (nd, npr) = residual_norm(a, b, &log_prior, &np, &nn);
            if (nd * nd + npr * npr).sqrt() <= (1.0 - 0.01 * t) * current {
                p = np;
                nu = nn;
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                return None;
            }
        }
    }
    None
}

pub fn brute_force_primal(
    psyn: &[f64],
    q: &QueryMatrix,
    a: &AnswerVector,
    gamma: f64,
) -> Result<Vec<f64>> {
    let (k, s) = (q.num_queries(), q.num_support());
    if s > MAX_ORACLE_SUPPORT {
        return invalid(format!(
            "oracle supports at most {MAX_ORACLE_SUPPORT} points, got {s}"
        ));
    }
    if k > MAX_ORACLE_QUERIES {
        return invalid(format!(
            "oracle supports at most {MAX_ORACLE_QUERIES} queries, got {k}"
        ));
    }
    if psyn.len() != s || a.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "psyn has {} entries, answers {}, matrix is {k}x{s}",
            psyn.len(),
            a.len()
        )));
    }
    if !(gamma >= 0.0) {
        return invalid("gamma must be >= 0");
    }
    if psyn.iter().any(|&x| !(x > 0.0)) {
        return invalid("prior must be strictly positive");
    }
    for (kk, (row, &ak)) in q.values.rows().into_iter().zip(&a.values).enumerate() {
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if ak < lo - gamma || ak > hi + gamma {
            return Err(Error::Infeasible(format!(
                "answer {ak} for query {kk} lies outside [{lo}, {hi}] widened by {gamma}"
            )));
        }
    }

    // per query: 0 inactive, 1 at a + γ, 2 at a − γ; with γ = 0 only "equal"
    let states: &[u8] = if gamma == 0.0 { &[1] } else { &[0, 1, 2] };
    let patterns = states.len().pow(k as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..patterns {
        let mut c = code;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for j in 0..k {
            let st = states[c % states.len()];
            c /= states.len();
            match st {
                1 => {
                    rows.push(j);
                    rhs.push(a.values[j] + gamma);
                }
                2 => {
                    rows.push(j);
                    rhs.push(a.values[j] - gamma);
                }
                _ => {}
            }
        }
        let m = rows.len() + 1;
        let amat = DMatrix::from_fn(m, s, |i, col| {
            if i < rows.len() {
                q.values[[rows[i], col]]
            } else {
                1.0
            }
        });
        rhs.push(1.0);
        let Some(p) = solve_equality(&amat, &DVector::from_vec(rhs), psyn) else {
            continue;
        };
        if max_violation(q, &p, &a.values, gamma) > FEASIBILITY_TOL {
            continue;
        }
        let obj = kl_divergence(&p, psyn);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, p));
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| {
        Error::Infeasible("no strictly positive distribution satisfies the constraints".into())
    })
}
