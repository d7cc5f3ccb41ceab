//! Projection of noisy answers onto the answers achievable on the synthetic support.
//!
//! Solves `min_{p ∈ Δ_S^+} ‖Qp − a‖₁` (Laplace answers) or `½‖Qp − a‖₂²`
//! (Gaussian answers) by entropic mirror descent started at the uniform vector.
//! The returned `a* = Q p*` is exactly realizable by a strictly positive
//! distribution on the support, so the downstream projection is always feasible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::MechanismKind;
use crate::workload::{AnswerVector, Provenance, QueryMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseMode {
    L1,
    L2,
}

impl DenoiseMode {
    /// Loss matched to the noise distribution of the mechanism.
    pub fn for_mechanism(kind: MechanismKind) -> Self {
        match kind {
            MechanismKind::Laplace => DenoiseMode::L1,
            MechanismKind::Gaussian => DenoiseMode::L2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseOptions {
    pub max_iters: usize,
    /// Stop once the objective improves by less than this over `window` iterations.
    pub tol: f64,
    pub window: usize,
    /// Lower bound on every coordinate of `p*`.
    pub p_floor: f64,
    /// Initial mirror step (l2) or the constant `c` of the `c/√t` schedule (l1).
    pub step: f64,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        DenoiseOptions {
            max_iters: 5000,
            tol: 1e-10,
            window: 50,
            p_floor: 1e-12,
            step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResult {
    pub p_star: Vec<f64>,
    pub a_star: AnswerVector,
    pub objective_value: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warning: Option<String>,
}

fn residual(q: &QueryMatrix, p: &[f64], a: &[f64]) -> Vec<f64> {
    q.apply(p).iter().zip(a).map(|(x, y)| x - y).collect()
}

fn objective(mode: DenoiseMode, r: &[f64]) -> f64 {
    match mode {
        DenoiseMode::L1 => r.iter().map(|x| x.abs()).sum(),
        DenoiseMode::L2 => 0.5 * r.iter().map(|x| x * x).sum::<f64>(),
    }
}

/// `Qᵀ v`
fn transpose_apply(q: &QueryMatrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q.num_support()];
    for (row, &vk) in q.values.rows().into_iter().zip(v) {
        if vk == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(row.iter()) {
            *o += vk * x;
        }
    }
    out
}

/// Multiplicative update `p ∝ p·exp(−η g)`, followed by the interior floor.
fn mirror_step(p: &[f64], g: &[f64], eta: f64, floor: f64) -> Vec<f64> {
    let logits: Vec<f64> = p.iter().zip(g).map(|(pi, gi)| pi.ln() - eta * gi).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    clamp_floor(&mut out, floor);
    out
}

fn clamp_floor(p: &mut [f64], floor: f64) {
    if p.iter().any(|&x| x < floor) {
        p.iter_mut().for_each(|x| *x = x.max(floor));
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

pub fn denoise(
    q: &QueryMatrix,
    noisy: &AnswerVector,
    mode: DenoiseMode,
    opts: &DenoiseOptions,
) -> Result<DenoiseResult> {
    let (k, s) = (q.num_queries(), q.num_support());
    if noisy.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "query matrix has {k} rows but {} answers were given",
            noisy.len()
        )));
    }
    if s == 0 {
        return Err(Error::EmptyTable);
    }
    if !(opts.p_floor > 0.0 && opts.p_floor * s as f64 <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p_floor {} is incompatible with S = {s}",
            opts.p_floor
        )));
    }
    let a = &noisy.values;
    let mut p = vec![1.0 / s as f64; s];
    let mut r = residual(q, &p, a);
    let initial = objective(mode, &r);
    let mut obj = initial;
    let mut history = vec![obj];
    let mut iterations = 0;
    let mut converged = false;

    match mode {
        DenoiseMode::L2 => {
            let mut eta = opts.step;
            while iterations < opts.max_iters {
                let g = transpose_apply(q, &r);
                // backtrack until the relative-smoothness decrease condition holds
                let mut accepted = None;
                for _ in 0..60 {
                    let cand = mirror_step(&p, &g, eta, opts.p_floor);
                    let rc = residual(q, &cand, a);
                    let oc = objective(mode, &rc);
                    let lin: f64 = g
                        .iter()
                        .zip(cand.iter().zip(&p))
                        .map(|(gi, (c, pi))| gi * (c - pi))
                        .sum();
                    if oc <= obj + lin + kl(&cand, &p) / eta + 1e-15 * obj.abs() && oc <= obj {
                        accepted = Some((cand, rc, oc));
                        break;
                    }
                    eta *= 0.5;
                }
                iterations += 1;
                let Some((cand, rc, oc)) = accepted else {
                    converged = true;
                    break;
                };
                p = cand;
                r = rc;
                obj = oc;
                eta *= 1.5;
                history.push(obj);
                if history.len() > opts.window {
                    let past = history[history.len() - 1 - opts.window];
                    if past - obj < opts.tol {
                        converged = true;
                        break;
                    }
                }
            }
        }
        DenoiseMode::L1 => {
            let mut best = (p.clone(), r.clone(), obj);
            let mut last_improvement = 0;
            while iterations < opts.max_iters {
                let signs: Vec<f64> = r
                    .iter()
                    .map(|x| x.signum() * (*x != 0.0) as u8 as f64)
                    .collect();
                let g = transpose_apply(q, &signs);
                let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                if gmax == 0.0 {
                    converged = true;
                    break;
                }
                iterations += 1;
                let eta = opts.step / ((iterations as f64).sqrt() * gmax);
                p = mirror_step(&p, &g, eta, opts.p_floor);
                r = residual(q, &p, a);
                obj = objective(mode, &r);
                if obj < best.2 - opts.tol {
                    best = (p.clone(), r.clone(), obj);
                    last_improvement = iterations;
                } else if obj < best.2 {
                    best = (p.clone(), r.clone(), obj);
                }
                if iterations - last_improvement >= opts.window * 20 {
                    converged = true;
                    break;
                }
            }
            p = best.0;
            obj = best.2;
        }
    }

    let warning = (!converged).then(|| {
        format!(
            "denoiser reached the iteration cap ({}) before the objective stabilized",
            opts.max_iters
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let a_star = AnswerVector {
        values: q.apply(&p),
        provenance: Provenance::Denoised,
    };
    Ok(DenoiseResult {
        p_star: p,
        a_star,
        objective_value: obj,
        initial_objective: initial,
        iterations,
        converged,
        warning,
    })
}
