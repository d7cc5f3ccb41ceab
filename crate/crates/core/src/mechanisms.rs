//! Laplace and Gaussian mechanisms, tight Gaussian calibration, and a basic
//! composition ledger.

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::workload::{AnswerVector, Provenance};

/// Standard normal CDF evaluated through `erfc` so both tails keep full relative precision.
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

/// Left side of the exact `(ε, δ)` condition for the Gaussian mechanism with
/// noise `σ` and L2 sensitivity `Δ`:
/// `Φ(Δ/2σ − εσ/Δ) − e^ε Φ(−Δ/2σ − εσ/Δ)`.
pub fn gaussian_privacy_profile(sigma: f64, eps: f64, delta2: f64) -> f64 {
    let a = delta2 / (2.0 * sigma);
    let b = eps * sigma / delta2;
    std_normal_cdf(a - b) - eps.exp() * std_normal_cdf(-a - b)
}

const CALIBRATION_MAX_ITERS: usize = 2000;

/// Smallest `σ` for which the Gaussian mechanism with L2 sensitivity `delta2` is
/// `(eps, delta)`-DP, by bisection on the (strictly decreasing) privacy profile.
pub fn calibrate_gaussian_sigma(delta2: f64, eps: f64, delta: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return invalid(format!("epsilon {eps} must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta {delta} must lie in (0,1)"));
    }
    if !(delta2 > 0.0 && delta2.is_finite()) {
        return invalid(format!("L2 sensitivity {delta2} must be positive"));
    }
    let violates = |s: f64| gaussian_privacy_profile(s, eps, delta2) > delta;

    let mut hi = delta2;
    let mut iters = 0;
    while violates(hi) {
        hi *= 2.0;
        iters += 1;
        if iters > CALIBRATION_MAX_ITERS {
            return Err(Error::NonConvergence(
                "could not bracket sigma from above".into(),
            ));
        }
    }
    let mut lo = hi / 2.0;
    while !violates(lo) {
        hi = lo;
        lo /= 2.0;
        iters += 1;
        if iters > CALIBRATION_MAX_ITERS || lo == 0.0 {
            return Err(Error::NonConvergence(
                "could not bracket sigma from below".into(),
            ));
        }
    }
    // invariant: violates(lo) && !violates(hi)
    while (hi - lo) > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if violates(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
        if iters > CALIBRATION_MAX_ITERS {
            return Err(Error::NonConvergence(format!(
                "bisection stalled in [{lo}, {hi}]"
            )));
        }
    }
    Ok(hi)
}

/// Classical `Δ·sqrt(2 ln(1.25/δ))/ε` calibration, valid (and loose) for `ε ≤ 1`.
pub fn classical_gaussian_sigma(delta2: f64, eps: f64, delta: f64) -> f64 {
    delta2 * (2.0 * (1.25 / delta).ln()).sqrt() / eps
}

/// Adds i.i.d. Laplace(0, b) noise with `b = delta1 / eps`.
pub fn laplace_noise(
    exact: &AnswerVector,
    delta1: f64,
    eps: f64,
    seed: u64,
) -> Result<AnswerVector> {
    if !(eps > 0.0) {
        return invalid(format!("epsilon {eps} must be positive"));
    }
    if !(delta1 > 0.0) {
        return invalid(format!("L1 sensitivity {delta1} must be positive"));
    }
    let b = delta1 / eps;
    let mut rng = rng::seeded(seed);
    let values = exact
        .values
        .iter()
        .map(|v| {
            let u: f64 = rng.sample(Open01);
            // inverse CDF of Laplace(0, b)
            let x = if u < 0.5 {
                b * (2.0 * u).ln()
            } else {
                -b * (2.0 * (1.0 - u)).ln()
            };
            v + x
        })
        .collect();
    Ok(AnswerVector {
        values,
        provenance: Provenance::Noisy,
    })
}

/// Adds i.i.d. N(0, σ²) noise per coordinate, drawn by inverse-CDF sampling.
pub fn gaussian_noise(exact: &AnswerVector, sigma: f64, seed: u64) -> Result<AnswerVector> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return invalid(format!("sigma {sigma} must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let values = exact
        .values
        .iter()
        .map(|v| {
            let u: f64 = rng.sample(Open01);
            // Φ^{-1}(u) = -√2 erfc^{-1}(2u)
            let z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
            v + sigma * z
        })
        .collect();
    Ok(AnswerVector {
        values,
        provenance: Provenance::Noisy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Laplace,
    Gaussian,
}

/// A calibrated mechanism: privacy parameters, noise scale (`b` or `σ`) and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub eps_post: f64,
    pub delta_post: f64,
    /// Sensitivity the scale was calibrated against (L1 for Laplace, L2 for Gaussian).
    pub sensitivity: f64,
    pub scale: f64,
    pub seed: u64,
}

impl MechanismSpec {
    pub fn calibrate(
        kind: MechanismKind,
        eps_post: f64,
        delta_post: f64,
        sensitivity: f64,
        seed: u64,
    ) -> Result<Self> {
        let scale = match kind {
            MechanismKind::Laplace => {
                if delta_post != 0.0 {
                    return invalid(format!(
                        "laplace mechanism requires delta_post = 0, got {delta_post}"
                    ));
                }
                if !(eps_post > 0.0) || !(sensitivity > 0.0) {
                    return invalid("laplace mechanism needs positive epsilon and sensitivity");
                }
                sensitivity / eps_post
            }
            MechanismKind::Gaussian => calibrate_gaussian_sigma(sensitivity, eps_post, delta_post)?,
        };
        Ok(MechanismSpec {
            kind,
            eps_post,
            delta_post,
            sensitivity,
            scale,
            seed,
        })
    }

    /// Which sensitivity norm this mechanism is calibrated against.
    pub fn norm(kind: MechanismKind) -> u32 {
        match kind {
            MechanismKind::Laplace => 1,
            MechanismKind::Gaussian => 2,
        }
    }

    pub fn privatize(&self, exact: &AnswerVector) -> Result<AnswerVector> {
        match self.kind {
            MechanismKind::Laplace => {
                laplace_noise(exact, self.sensitivity, self.eps_post, self.seed)
            }
            MechanismKind::Gaussian => gaussian_noise(exact, self.scale, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub label: String,
    pub epsilon: f64,
    pub delta: f64,
}

/// Ledger of `(ε, δ)` charges under basic composition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAccount {
    charges: Vec<Charge>,
}

impl PrivacyAccount {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, label: impl Into<String>, epsilon: f64, delta: f64) -> Result<()> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return invalid(format!("charge epsilon {epsilon} must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return invalid(format!("charge delta {delta} must lie in [0,1]"));
        }
        self.charges.push(Charge {
            label: label.into(),
            epsilon,
            delta,
        });
        Ok(())
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    pub fn extend(&mut self, other: &PrivacyAccount) {
        self.charges.extend(other.charges.iter().cloned());
    }

    pub fn totals(&self) -> (f64, f64) {
        compose(self)
    }
}

/// Componentwise sum of all charges.
pub fn compose(account: &PrivacyAccount) -> (f64, f64) {
    account
        .charges
        .iter()
        .fold((0.0, 0.0), |(e, d), c| (e + c.epsilon, d + c.delta))
}
