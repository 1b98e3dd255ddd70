//! Covertness against a radiometer warden.
//!
//! Under Gaussian signalling, Willie's single-slot observation `y_w` is a
//! zero-mean circular Gaussian whose variance is `lambda0` when only the
//! public stream is on air and `lambda1` when the covert stream is added.
//! The radiometer statistic `|y_w|^2` is then exponential with mean
//! `lambda_i`, which gives closed forms for the KL divergences, the optimal
//! threshold and the minimal detection error probability
//! `xi = P_FA + P_MD`.
//!
//! The covertness constraint requires both KL divergences to stay below
//! `2 eps^2`; by Pinsker's inequality this guarantees `xi* >= 1 - eps`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noma::NomaParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovertError {
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, CovertError>;

fn check_positive(lambda0: f64, lambda1: f64) -> Result<()> {
    if lambda0 > 0.0 && lambda1 > 0.0 && lambda0.is_finite() && lambda1.is_finite() {
        Ok(())
    } else {
        Err(CovertError::Domain(format!(
            "variances must be positive and finite, got ({lambda0}, {lambda1})"
        )))
    }
}

/// Received-power variances at Willie under H0 (public only) and H1.
pub fn lambdas(np: &NomaParams, gain_w: f64) -> (f64, f64) {
    (np.beta * np.power * gain_w + np.noise, np.power * gain_w + np.noise)
}

/// `(D(p0 || p1), D(p1 || p0))` in nats for exponential densities with means
/// `lambda0` and `lambda1`.
pub fn kl_pair(lambda0: f64, lambda1: f64) -> Result<(f64, f64)> {
    check_positive(lambda0, lambda1)?;
    let r = lambda1 / lambda0;
    // ln r + 1/r - 1 and -ln r + r - 1, written to stay accurate near r = 1.
    let ln_r = r.ln();
    let kl_01 = (ln_r + (1.0 / r - 1.0)).max(0.0);
    let kl_10 = ((r - 1.0) - ln_r).max(0.0);
    Ok((kl_01, kl_10))
}

/// Both KL divergences within `2 eps^2`.
pub fn c1_satisfied(lambda0: f64, lambda1: f64, epsilon: f64) -> Result<bool> {
    let (a, b) = kl_pair(lambda0, lambda1)?;
    Ok(a.max(b) <= 2.0 * epsilon * epsilon)
}

/// Lower bound `max(0, 1 - sqrt(kl / 2))` on the detection error probability.
pub fn pinsker_bound(kl: f64) -> f64 {
    (1.0 - (kl.max(0.0) / 2.0).sqrt()).max(0.0)
}

/// `P_FA + P_MD` of the radiometer with threshold `tau`.
pub fn detection_error(lambda0: f64, lambda1: f64, tau: f64) -> Result<f64> {
    check_positive(lambda0, lambda1)?;
    if tau.is_infinite() && tau > 0.0 {
        return Ok(1.0);
    }
    let tau = tau.max(0.0);
    let p_fa = (-tau / lambda0).exp();
    let p_md = -(-tau / lambda1).exp_m1();
    Ok(p_fa + p_md)
}

/// Optimal radiometer threshold and its detection error probability.
///
/// When the hypotheses coincide the warden cannot do better than guessing;
/// the threshold is reported as `+inf` and `xi* = 1`.
pub fn optimal_radiometer(lambda0: f64, lambda1: f64) -> Result<(f64, f64)> {
    check_positive(lambda0, lambda1)?;
    if lambda1 < lambda0 {
        return Err(CovertError::Domain(format!(
            "expected lambda1 >= lambda0, got ({lambda0}, {lambda1})"
        )));
    }
    if lambda1 == lambda0 {
        return Ok((f64::INFINITY, 1.0));
    }
    let tau = lambda0 * lambda1 / (lambda1 - lambda0) * (lambda1 / lambda0).ln();
    let xi = detection_error(lambda0, lambda1, tau)?;
    Ok((tau, xi.clamp(0.0, 1.0)))
}

/// Monte-Carlo estimate of the detection error probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepEstimate {
    pub xi: f64,
    pub p_fa: f64,
    pub p_md: f64,
    /// Binomial standard error of `xi`.
    pub std_err: f64,
}

/// Draws `n_samples` radiometer statistics under each hypothesis and counts
/// threshold crossings.
pub fn dep_monte_carlo<R: Rng + ?Sized>(
    lambda0: f64,
    lambda1: f64,
    tau: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<DepEstimate> {
    check_positive(lambda0, lambda1)?;
    if n_samples < 10_000 {
        return Err(CovertError::Domain(format!("need at least 1e4 samples, got {n_samples}")));
    }
    let mut alarms = 0usize;
    for _ in 0..n_samples {
        let x: f64 = Exp1.sample(rng);
        alarms += usize::from(x * lambda0 > tau);
    }
    let mut misses = 0usize;
    for _ in 0..n_samples {
        let x: f64 = Exp1.sample(rng);
        misses += usize::from(x * lambda1 <= tau);
    }
    let n = n_samples as f64;
    let p_fa = alarms as f64 / n;
    let p_md = misses as f64 / n;
    let std_err = ((p_fa * (1.0 - p_fa) + p_md * (1.0 - p_md)) / n).sqrt();
    Ok(DepEstimate { xi: p_fa + p_md, p_fa, p_md, std_err })
}

/// Smallest public power fraction `beta` for which C1 holds whatever
/// Willie's channel gain.
///
/// `lambda1 / lambda0 = (g + 1) / (beta g + 1)` increases in `g` towards
/// `1 / beta`, and both divergences increase with that ratio, so it suffices
/// to bound the ratio at its supremum.
pub fn covert_beta_floor(epsilon: f64) -> f64 {
    let budget = 2.0 * epsilon * epsilon;
    if budget <= 0.0 {
        return 1.0;
    }
    // D(p1 || p0) = r - 1 - ln r dominates D(p0 || p1) for r > 1.
    let excess = |r: f64| (r - 1.0) - r.ln() - budget;
    let (mut lo, mut hi) = (1.0, 2.0);
    while excess(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    1.0 / lo
}

/// Covertness summary of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovertStats {
    pub lambda0: f64,
    pub lambda1: f64,
    pub kl01: f64,
    pub kl10: f64,
    /// Optimal radiometer threshold (`+inf` when the hypotheses coincide).
    #[serde(skip)]
    pub tau_star: f64,
    pub xi_star: f64,
    pub c1_ok: bool,
}

impl CovertStats {
    pub fn evaluate(np: &NomaParams, gain_w: f64, epsilon: f64) -> Result<Self> {
        let (lambda0, lambda1) = lambdas(np, gain_w);
        let (kl01, kl10) = kl_pair(lambda0, lambda1)?;
        let (tau_star, xi_star) = optimal_radiometer(lambda0, lambda1)?;
        Ok(Self {
            lambda0,
            lambda1,
            kl01,
            kl10,
            tau_star,
            xi_star,
            c1_ok: kl01.max(kl10) <= 2.0 * epsilon * epsilon,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_examples() {
        let np = NomaParams::new(0.5, 2.0, 0.1);
        let (a, b) = lambdas(&np, 1.0);
        assert!((a - 1.1).abs() < 1e-15 && (b - 2.1).abs() < 1e-15);
        let np1 = NomaParams::new(1.0, 2.0, 0.1);
        let (a, b) = lambdas(&np1, 3.0);
        assert_eq!(a, b);
        assert_eq!(lambdas(&np, 0.0), (0.1, 0.1));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_pair(3.0, 3.0).unwrap(), (0.0, 0.0));
        let (a, b) = kl_pair(1.0, 2.0).unwrap();
        assert!((a - (2f64.ln() - 0.5)).abs() < 1e-15);
        assert!((b - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((a - 0.19315).abs() < 1e-5 && (b - 0.30685).abs() < 1e-5);
        assert!(kl_pair(0.0, 1.0).is_err());
        assert!(kl_pair(1.0, -1.0).is_err());
    }

    #[test]
    fn c1_examples() {
        assert!(c1_satisfied(2.0, 2.0, 0.01).unwrap());
        assert!(!c1_satisfied(1.0, 2.0, 0.1).unwrap());
        assert!(c1_satisfied(1.0, 2.0, 0.40).unwrap());
    }

    #[test]
    fn radiometer_examples() {
        assert_eq!(optimal_radiometer(1.0, 1.0).unwrap(), (f64::INFINITY, 1.0));
        let (tau, xi) = optimal_radiometer(1.0, 2.0).unwrap();
        assert!((tau - 4f64.ln()).abs() < 1e-12 && (tau - 1.38629).abs() < 1e-5);
        assert!((xi - 0.75).abs() < 1e-12);
        let (kl01, _) = kl_pair(1.0, 2.0).unwrap();
        assert!((pinsker_bound(kl01) - (1.0 - (kl01 / 2.0).sqrt())).abs() < 1e-15);
        assert!((pinsker_bound(kl01) - 0.68925).abs() < 5e-5);
        assert!(xi >= pinsker_bound(kl01));
        assert!(optimal_radiometer(2.0, 1.0).is_err());
    }

    #[test]
    fn pinsker_examples() {
        assert_eq!(pinsker_bound(0.0), 1.0);
        assert!((pinsker_bound(0.02) - 0.9).abs() < 1e-15);
        assert_eq!(pinsker_bound(2.0), 0.0);
        assert_eq!(pinsker_bound(5.0), 0.0);
    }

    #[test]
    fn monte_carlo_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let always = dep_monte_carlo(1.0, 2.0, 0.0, 10_000, &mut rng).unwrap();
        assert_eq!((always.p_fa, always.p_md, always.xi), (1.0, 0.0, 1.0));
        let never = dep_monte_carlo(1.0, 2.0, 1e300, 10_000, &mut rng).unwrap();
        assert_eq!((never.p_fa, never.p_md, never.xi), (0.0, 1.0, 1.0));
        assert!(dep_monte_carlo(1.0, 2.0, 1.0, 100, &mut rng).is_err());
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (tau, xi) = optimal_radiometer(1.0, 2.0).unwrap();
        let est = dep_monte_carlo(1.0, 2.0, tau, 1_000_000, &mut rng).unwrap();
        // P_FA = 1/4 and P_MD = 1/2, estimated from independent samples.
        let oracle = ((0.25 * 0.75 + 0.5 * 0.5) / 1e6f64).sqrt();
        assert!((est.std_err - oracle).abs() < 0.05 * oracle, "{}", est.std_err);
        assert!((est.xi - xi).abs() <= 3.0 * est.std_err, "{est:?}");
    }

    #[test]
    fn beta_floor_guarantees_c1() {
        for eps in [0.05, 0.1, 0.2] {
            let floor = covert_beta_floor(eps);
            let np = NomaParams::new(floor, 1.0, 1e-12);
            let (l0, l1) = lambdas(&np, 1e9);
            assert!(c1_satisfied(l0, l1, eps).unwrap());
            // Tight: a slightly smaller split fails for a strong warden channel.
            let np = NomaParams::new(floor - 1e-4, 1.0, 1e-12);
            let (l0, l1) = lambdas(&np, 1e9);
            assert!(!c1_satisfied(l0, l1, eps).unwrap());
        }
        assert!(covert_beta_floor(0.05) > covert_beta_floor(0.1));
    }
}
